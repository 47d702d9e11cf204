//! Shot-level simulation of ensemble readout.
//!
//! One simulated qubit is re-prepared and measured `shots` times; the time
//! average stands in for the ensemble average. Each shot collapses onto `|0>`
//! with the projection probability of the unrotated state, then the readout
//! channel of the profile turns the collapsed shots into counts. Aggregate
//! counts receive one Gaussian perturbation of standard deviation
//! `sigma_exp * sqrt(shots)`, so their variance is `shots * sigma_N^2`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::bloch::{attacker_fraction, BlochAngles, ObservableModel};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::profile::{HardwareProfile, NoiseMode};
use crate::rng::RngSeed;

/// One aggregated ensemble measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub shots: u64,
    pub total_counts: f64,
    /// Fraction of the ensemble found in `|0>`, clamped into `[0, 1]`.
    pub n_zero_fraction: f64,
    /// Model-based standard error of `n_zero_fraction`.
    pub sigma_est: f64,
    pub prep: BlochAngles,
    pub meas: BlochAngles,
}

/// Unclamped `|0>` fraction implied by aggregate counts.
///
/// With `|1>` bright this is `1 - counts / (shots (n0 + n1))`; with `|0>`
/// bright the complementary reading `counts / (shots (n0 + n1))` applies.
pub fn raw_zero_fraction(model: &ObservableModel, shots: u64, total_counts: f64) -> f64 {
    let normalized = total_counts / (shots as f64 * model.scale());
    if model.one_is_bright() {
        1.0 - normalized
    } else {
        normalized
    }
}

/// Standard error of the `|0>` fraction for a record whose mean count per
/// shot is `mean_count`, from the total-uncertainty model evaluated at the
/// population implied by that mean.
pub fn fraction_standard_error(model: &ObservableModel, mean_count: f64, shots: u64) -> f64 {
    let gap = model.n1 - model.n0;
    let p1 = if gap.abs() < f64::EPSILON * model.scale() {
        0.5
    } else {
        ((mean_count - model.n0) / gap).clamp(0.0, 1.0)
    };
    let p0 = 1.0 - p1;
    let mean = p0 * model.n0 + p1 * model.n1;
    let variance = p0 * p1 * gap * gap + mean + model.sigma_exp * model.sigma_exp;
    variance.sqrt() / (model.scale() * (shots as f64).sqrt())
}

impl MeasurementRecord {
    /// Builds a record from raw counts, recomputing every derived quantity.
    pub fn from_counts(model: &ObservableModel, prep: BlochAngles, meas: BlochAngles, shots: u64, total_counts: f64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::Precondition("shots must be at least 1".into()));
        }
        let raw = raw_zero_fraction(model, shots, total_counts);
        Ok(Self {
            shots,
            total_counts,
            n_zero_fraction: raw.clamp(0.0, 1.0),
            sigma_est: fraction_standard_error(model, total_counts / shots as f64, shots),
            prep,
            meas,
        })
    }

    /// Aggregate counts normalized per shot by `n0 + n1`.
    pub fn normalized_counts(&self, model: &ObservableModel) -> f64 {
        self.total_counts / (self.shots as f64 * model.scale())
    }
}

/// Simulates `shots` re-preparations of `prep`, each unrotated along
/// `meas_axis` and read out through the profile's channel.
///
/// The expected `|0>` fraction is `(1 + |c| * overlap) / 2` in both noise modes.
pub fn simulate_measurement(
    profile: &HardwareProfile,
    prep: &BlochAngles,
    meas_axis: &BlochAngles,
    shots: u64,
    seed: RngSeed,
) -> Result<MeasurementRecord> {
    if shots == 0 {
        return Err(Error::Precondition("shots must be at least 1".into()));
    }
    let model = &profile.observable;
    let mut rng = seed.rng();
    let p_zero = attacker_fraction(1.0, prep, meas_axis).clamp(0.0, 1.0);

    let mut total = match profile.noise_mode {
        NoiseMode::PhotonCount => {
            // Collapsing shot by shot and summing per-shot Poisson counts is
            // the same distribution as one binomial split and two Poisson sums.
            let zeros = sample_binomial(&mut rng, shots, p_zero);
            sample_poisson(&mut rng, zeros as f64 * model.n0) + sample_poisson(&mut rng, (shots - zeros) as f64 * model.n1)
        }
        NoiseMode::BinaryReadout => {
            let flip = 0.5 * (1.0 - model.contrast().abs());
            let read_zero = p_zero * (1.0 - flip) + (1.0 - p_zero) * flip;
            let zeros = sample_binomial(&mut rng, shots, read_zero);
            // The bright outcome contributes the full count scale per shot.
            let bright = if model.one_is_bright() { shots - zeros } else { zeros };
            bright as f64 * model.scale()
        }
    };

    if model.sigma_exp > 0.0 {
        let noise = Normal::new(0.0, model.sigma_exp * (shots as f64).sqrt()).expect("finite positive std");
        total += noise.sample(&mut rng);
    }
    total = total.max(0.0);

    MeasurementRecord::from_counts(model, *prep, *meas_axis, shots, total)
}

fn sample_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

fn sample_poisson<R: Rng>(rng: &mut R, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else {
        Poisson::new(lambda).expect("valid poisson").sample(rng)
    }
}

/// Mean and spread of normalized counts at one preparation angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiPoint {
    pub theta: f64,
    /// Mean of `<N> / (n0 + n1)` over repetitions.
    pub mean_norm: f64,
    /// Per-shot standard deviation `sigma_N / (n0 + n1)` estimated from the
    /// spread of repeated records.
    pub std_norm: f64,
}

/// A Rabi scan: normalized means and standard deviations versus `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiScan {
    /// The `n0 + n1` used for normalization; fixes the absolute count scale
    /// needed to separate shot noise from experimental noise.
    pub scale: f64,
    pub points: Vec<RabiPoint>,
}

impl RabiScan {
    /// Aggregates repeated records. Records are grouped by preparation polar
    /// angle in order of first appearance; each group needs two or more.
    pub fn from_records(model: &ObservableModel, records: &[MeasurementRecord]) -> Result<Self> {
        let mut groups: Vec<(f64, Vec<&MeasurementRecord>)> = Vec::new();
        for rec in records {
            let theta = rec.prep.theta();
            match groups.iter_mut().find(|(t, _)| *t == theta) {
                Some((_, g)) => g.push(rec),
                None => groups.push((theta, vec![rec])),
            }
        }
        if groups.is_empty() {
            return Err(Error::Precondition("no records to aggregate".into()));
        }
        let scale = model.scale();
        let mut points = Vec::with_capacity(groups.len());
        for (theta, group) in groups {
            if group.len() < 2 {
                return Err(Error::Precondition(format!("theta = {theta} has a single record; need repetitions >= 2")));
            }
            let k = group.len() as f64;
            let per_shot: Vec<f64> = group.iter().map(|r| r.total_counts / r.shots as f64).collect();
            let mean = per_shot.iter().sum::<f64>() / k;
            let ss: f64 = group
                .iter()
                .zip(&per_shot)
                .map(|(r, m)| r.shots as f64 * (m - mean).powi(2))
                .sum();
            points.push(RabiPoint {
                theta,
                mean_norm: mean / scale,
                std_norm: (ss / (k - 1.0)).sqrt() / scale,
            });
        }
        Ok(Self { scale, points })
    }
}

/// Raw records behind a Rabi scan, indexed `[theta][repetition]`.
///
/// Each point prepares `R(theta, 0)|0>` and reads the observable directly.
pub fn rabi_scan_records(
    profile: &HardwareProfile,
    theta_grid: &[f64],
    shots: u64,
    repetitions: usize,
    seed: RngSeed,
) -> Result<Vec<Vec<MeasurementRecord>>> {
    if theta_grid.is_empty() {
        return Err(Error::Precondition("theta grid is empty".into()));
    }
    if shots == 0 || repetitions == 0 {
        return Err(Error::Precondition("shots and repetitions must be at least 1".into()));
    }
    let angles = theta_grid
        .iter()
        .map(|&t| BlochAngles::new(t, 0.0))
        .collect::<Result<Vec<_>>>()?;
    map_indexed(angles.len(), |i| {
        let point_seed = seed.derive(i as u64);
        (0..repetitions)
            .map(|r| simulate_measurement(profile, &angles[i], &BlochAngles::NORTH, shots, point_seed.derive(r as u64)))
            .collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect()
}

/// Normalized expectation and per-shot uncertainty versus `theta`.
pub fn rabi_scan(profile: &HardwareProfile, theta_grid: &[f64], shots: u64, repetitions: usize, seed: RngSeed) -> Result<RabiScan> {
    if repetitions < 2 {
        return Err(Error::Precondition("a standard deviation needs repetitions >= 2".into()));
    }
    let records = rabi_scan_records(profile, theta_grid, shots, repetitions, seed)?;
    let flat: Vec<MeasurementRecord> = records.into_iter().flatten().collect();
    RabiScan::from_records(&profile.observable, &flat)
}

const NOISE_FIT_MAX_ITER: usize = 500;

/// Fits the observable model to a Rabi scan.
///
/// The expectation curve is linear in `(n0, n1)` and is solved exactly by
/// least squares. The experimental noise is then the `sigma_exp >= 0`
/// minimizing the squared error between the measured standard deviations and
/// the total-uncertainty curve, found by golden-section search.
pub fn fit_noise_model(scan: &RabiScan) -> Result<ObservableModel> {
    let mut distinct: Vec<f64> = scan.points.iter().map(|p| p.theta).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::Precondition(format!("need at least 5 distinct theta values, got {}", distinct.len())));
    }
    let s = scan.scale;

    // Normal equations for y = n0 a + n1 b with a = cos^2(t/2), b = sin^2(t/2).
    let (mut saa, mut sab, mut sbb, mut sya, mut syb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &scan.points {
        let a = (0.5 * p.theta).cos().powi(2);
        let b = 1.0 - a;
        let y = p.mean_norm * s;
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sya += y * a;
        syb += y * b;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() <= 1e-12 * (saa * sbb).max(f64::MIN_POSITIVE) {
        return Err(Error::FitFailed {
            reason: "theta grid does not separate the two eigenvalues".into(),
            moment_estimate: None,
        });
    }
    let n0 = ((sya * sbb - syb * sab) / det).max(0.0);
    let n1 = ((syb * saa - sya * sab) / det).max(0.0);
    if n0 + n1 <= 0.0 {
        return Err(Error::FitFailed {
            reason: "fitted eigenvalues are both zero".into(),
            moment_estimate: None,
        });
    }

    // Variance without the experimental term at each theta.
    let base: Vec<(f64, f64)> = scan
        .points
        .iter()
        .map(|p| {
            let b = (0.5 * p.theta).sin().powi(2);
            let a = 1.0 - b;
            let mean = a * n0 + b * n1;
            (p.std_norm * s, a * b * (n1 - n0).powi(2) + mean)
        })
        .collect();
    let loss = |sigma: f64| -> f64 { base.iter().map(|(d, v)| (d - (v + sigma * sigma).sqrt()).powi(2)).sum() };
    let upper = 2.0 * base.iter().map(|(d, _)| *d).fold(0.0, f64::max) + 1.0;
    let sigma_exp = golden_section_min(loss, 0.0, upper, 1e-12 * s.max(1.0), NOISE_FIT_MAX_ITER).ok_or_else(|| Error::FitFailed {
        reason: format!("noise fit did not converge within {NOISE_FIT_MAX_ITER} iterations"),
        moment_estimate: None,
    })?;
    ObservableModel::new(n0, n1, sigma_exp)
}

/// Minimizes a unimodal function on `[lo, hi]`. `None` if the bracket does
/// not shrink below `tol` within `max_iter` steps.
pub(crate) fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            // Endpoints are candidates too: the minimum may sit on the boundary.
            let mid = 0.5 * (lo + hi);
            return Some(if f(lo) < f(mid) { lo } else { mid });
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    None
}

/// `n` evenly spaced values covering `[0, pi]` inclusive.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| std::f64::consts::PI * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{expectation_n, total_uncertainty};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ideal() -> HardwareProfile {
        HardwareProfile::new("ideal", ObservableModel::new(0.0, 100.0, 0.0).unwrap(), 100, NoiseMode::PhotonCount).unwrap()
    }

    #[test]
    fn rejects_zero_shots() {
        let r = simulate_measurement(&ideal(), &BlochAngles::NORTH, &BlochAngles::NORTH, 0, RngSeed::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn noiseless_matching_axes_read_one_exactly() {
        for seed in 0..20 {
            let r = simulate_measurement(&ideal(), &BlochAngles::NORTH, &BlochAngles::NORTH, 1000, RngSeed::new(seed, 0)).unwrap();
            assert_eq!(r.n_zero_fraction, 1.0);
            assert_eq!(r.total_counts, 0.0);
        }
    }

    #[test]
    fn deterministic_records() {
        let p = HardwareProfile::builtin("kyoto").unwrap();
        let a = BlochAngles::new(1.0, 2.0).unwrap();
        let r1 = simulate_measurement(&p, &a, &BlochAngles::NORTH, 100, RngSeed::new(3, 9)).unwrap();
        let r2 = simulate_measurement(&p, &a, &BlochAngles::NORTH, 100, RngSeed::new(3, 9)).unwrap();
        assert_eq!(r1.total_counts.to_bits(), r2.total_counts.to_bits());
        assert_eq!(r1, r2);
    }

    #[test]
    fn large_shot_limit_matches_contrast() {
        // (1 + 0.986) / 2 = 0.993
        let p = HardwareProfile::builtin("sherbrooke").unwrap();
        let r = simulate_measurement(&p, &BlochAngles::NORTH, &BlochAngles::NORTH, 1_000_000, RngSeed::new(11, 0)).unwrap();
        assert!((r.n_zero_fraction - 0.993).abs() < 1e-3, "{}", r.n_zero_fraction);
    }

    #[test]
    fn record_spread_matches_total_uncertainty() {
        // Kyoto, equator preparation read along z: the spread of records,
        // rescaled by sqrt(shots), estimates sigma_N / (n0 + n1).
        let p = HardwareProfile::builtin("kyoto").unwrap();
        let prep = BlochAngles::new(FRAC_PI_2, 0.0).unwrap();
        let seed = RngSeed::new(5, 0);
        let xs: Vec<f64> = (0..1000)
            .map(|i| simulate_measurement(&p, &prep, &BlochAngles::NORTH, 100, seed.derive(i)).unwrap().n_zero_fraction)
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let expected = total_uncertainty(&p.observable, &prep) / p.observable.scale();
        assert!((sd * 10.0 / expected - 1.0).abs() < 0.2, "{} vs {}", sd * 10.0, expected);
    }

    #[test]
    fn photon_variance_matches_projection_plus_shot_noise() {
        let profile = HardwareProfile::new("v", ObservableModel::new(10.0, 60.0, 0.0).unwrap(), 100, NoiseMode::PhotonCount).unwrap();
        let prep = BlochAngles::new(1.1, 0.0).unwrap();
        let shots = 100;
        let reps = 2000;
        let totals: Vec<f64> = (0..reps)
            .map(|i| simulate_measurement(&profile, &prep, &BlochAngles::NORTH, shots, RngSeed::new(8, i)).unwrap().total_counts)
            .collect();
        let m = totals.iter().sum::<f64>() / reps as f64;
        let var = totals.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let expected = shots as f64 * total_uncertainty(&profile.observable, &prep).powi(2);
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
        assert!((m / shots as f64 - expectation_n(&profile.observable, &prep)).abs() < 0.5);
    }

    #[test]
    fn noise_modes_share_expected_fraction() {
        let base = HardwareProfile::from_contrast("m", 0.7, 0.0).unwrap();
        let binary = base.clone().with_noise_mode(NoiseMode::BinaryReadout);
        let prep = BlochAngles::new(0.9, 0.2).unwrap();
        let meas = BlochAngles::new(0.4, 1.0).unwrap();
        let expected = attacker_fraction(0.7, &prep, &meas);
        for p in [&base, &binary] {
            let r = simulate_measurement(p, &prep, &meas, 2_000_000, RngSeed::new(2, 0)).unwrap();
            assert!((r.n_zero_fraction - expected).abs() < 2e-3, "{:?}: {}", p.noise_mode, r.n_zero_fraction);
        }
    }

    #[test]
    fn zero_bright_convention() {
        let nv = HardwareProfile::new("nv", ObservableModel::new(100.0, 40.0, 0.0).unwrap(), 100, NoiseMode::PhotonCount).unwrap();
        let prep = BlochAngles::new(0.5, 0.0).unwrap();
        let expected = attacker_fraction(nv.contrast().abs(), &prep, &BlochAngles::NORTH);
        let r = simulate_measurement(&nv, &prep, &BlochAngles::NORTH, 1_000_000, RngSeed::new(4, 0)).unwrap();
        assert!((r.n_zero_fraction - expected).abs() < 2e-3);
    }

    #[test]
    fn from_counts_recomputes_fraction() {
        let m = ObservableModel::new(0.0, 100.0, 0.0).unwrap();
        let r = MeasurementRecord::from_counts(&m, BlochAngles::NORTH, BlochAngles::NORTH, 10, 250.0).unwrap();
        assert!((r.n_zero_fraction - 0.75).abs() < 1e-15);
        assert!(r.sigma_est > 0.0);
    }

    #[test]
    fn rabi_scan_endpoints() {
        let scan = rabi_scan(&ideal(), &theta_grid(5), 1000, 10, RngSeed::default()).unwrap();
        assert_eq!(scan.points.len(), 5);
        assert!((scan.points[4].mean_norm - 1.0).abs() < 0.01);
        assert_eq!(scan.points[0].std_norm, 0.0);
        assert!(scan.points[2].std_norm > scan.points[4].std_norm);
    }

    #[test]
    fn rabi_scan_preconditions() {
        assert!(rabi_scan(&ideal(), &[], 10, 10, RngSeed::default()).is_err());
        assert!(rabi_scan(&ideal(), &[0.0], 10, 1, RngSeed::default()).is_err());
        assert!(rabi_scan(&ideal(), &[0.0], 0, 5, RngSeed::default()).is_err());
        assert!(rabi_scan(&ideal(), &[4.0], 10, 5, RngSeed::default()).is_err());
    }

    #[test]
    fn exact_fit_of_noiseless_curve() {
        let model = ObservableModel::new(7.5, 88.0, 3.0).unwrap();
        let points = theta_grid(9)
            .into_iter()
            .map(|t| {
                let a = BlochAngles::new(t, 0.0).unwrap();
                RabiPoint {
                    theta: t,
                    mean_norm: expectation_n(&model, &a) / model.scale(),
                    std_norm: total_uncertainty(&model, &a) / model.scale(),
                }
            })
            .collect();
        let fitted = fit_noise_model(&RabiScan { scale: model.scale(), points }).unwrap();
        assert!((fitted.n0 - 7.5).abs() < 1e-9);
        assert!((fitted.n1 - 88.0).abs() < 1e-9);
        assert!((fitted.sigma_exp - 3.0).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_degenerate_grid() {
        let points = vec![RabiPoint { theta: 1.0, mean_norm: 0.3, std_norm: 0.1 }; 8];
        assert!(fit_noise_model(&RabiScan { scale: 100.0, points }).is_err());
    }

    #[test]
    fn fit_round_trip_brisbane() {
        let p = HardwareProfile::builtin("brisbane").unwrap();
        let scan = rabi_scan(&p, &theta_grid(41), 100, 100, RngSeed::new(17, 0)).unwrap();
        let fitted = fit_noise_model(&scan).unwrap();
        assert!((fitted.contrast() - 0.843).abs() < 0.02, "{}", fitted.contrast());
        assert!((fitted.sigma_exp_norm() - 0.270).abs() < 0.03);
        // Experimental noise dominates the uncertainty at theta = 0.
        assert!((scan.points[0].std_norm / 0.270 - 1.0).abs() < 0.15);
    }

    #[test]
    fn sherbrooke_projection_noise_peaks_at_equator() {
        let p = HardwareProfile::builtin("sherbrooke").unwrap();
        let scan = rabi_scan(&p, &theta_grid(41), 100, 100, RngSeed::new(1, 0)).unwrap();
        let argmax = scan
            .points
            .iter()
            .max_by(|a, b| a.std_norm.total_cmp(&b.std_norm))
            .unwrap();
        assert!((argmax.theta - FRAC_PI_2).abs() < PI / 8.0, "{}", argmax.theta);
        let fitted = fit_noise_model(&scan).unwrap();
        assert!(fitted.sigma_exp_norm() < 0.02);
    }

    #[test]
    fn golden_section_finds_boundary_minimum() {
        let x = golden_section_min(|x| (x + 1.0).powi(2), 0.0, 5.0, 1e-12, 500).unwrap();
        assert_eq!(x, 0.0);
        let x = golden_section_min(|x| (x - 2.0).powi(2), 0.0, 5.0, 1e-10, 500).unwrap();
        assert!((x - 2.0).abs() < 1e-9);
    }
}
