//! Distribution fits and the security calculus.
//!
//! The bank's `n_b` distribution is fitted with a Gaussian, the forger's
//! `n_f` distribution with a skew normal. Acceptance probabilities are the
//! fitted mass above the threshold `n_T`; a coin of `M` tokens is accepted
//! with probability `p^M` under the all-pass rule.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::nelder_mead;
use crate::par::map_indexed;
use crate::quadrature::integrate_adaptive;

pub const MIN_GAUSSIAN_SAMPLES: usize = 10;
pub const MIN_SKEW_NORMAL_SAMPLES: usize = 50;
/// Absolute tolerance of the quadrature behind skew-normal probabilities.
pub const QUADRATURE_TOLERANCE: f64 = 1e-12;
/// Absolute tolerance of the threshold bisection, in units of `n`.
pub const THRESHOLD_TOLERANCE: f64 = 1e-10;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const SKEW_FIT_MAX_ITER: usize = 4000;
// Standardized coordinates beyond this carry no representable density.
const Z_CUTOFF: f64 = 40.0;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, accurate in both tails.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -37.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - 0.5 * (2.0 * PI).ln() - (-x).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)).ln()
    }
}

fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Anything whose upper-tail mass can be evaluated at a threshold.
pub trait FittedDistribution {
    fn mean(&self) -> f64;
    fn std_dev(&self) -> f64;
    /// `P(X > x)`.
    fn survival(&self, x: f64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub std: f64,
}

impl GaussianFit {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
            return Err(Error::Precondition(format!("invalid Gaussian (mean {mean}, std {std})")));
        }
        Ok(Self { mean, std })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        log_normal_pdf(z).exp() / self.std
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mean) / self.std)
    }
}

impl FittedDistribution for GaussianFit {
    fn mean(&self) -> f64 {
        self.mean
    }

    fn std_dev(&self) -> f64 {
        self.std
    }

    fn survival(&self, x: f64) -> f64 {
        normal_cdf((self.mean - x) / self.std)
    }
}

/// Population moments of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
}

fn all_equal(samples: &[f64]) -> bool {
    samples.iter().all(|&x| x == samples[0])
}

pub fn sample_moments(samples: &[f64]) -> SampleMoments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m3) = samples.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    let variance = m2 / n;
    let skewness = if variance > 0.0 { (m3 / n) / variance.powf(1.5) } else { 0.0 };
    SampleMoments {
        count: samples.len(),
        mean,
        variance,
        skewness,
    }
}

/// Maximum-likelihood Gaussian (population standard deviation). Needs at
/// least two samples with nonzero spread; see [`fit_gaussian`] for the
/// checked entry point.
pub fn gaussian_moments(samples: &[f64]) -> Result<GaussianFit> {
    if samples.len() < 2 {
        return Err(Error::Precondition("need at least two samples".into()));
    }
    if all_equal(samples) {
        return Err(Error::DegenerateSample("samples have zero variance".into()));
    }
    let m = sample_moments(samples);
    GaussianFit::new(m.mean, m.variance.sqrt())
}

pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianFit> {
    if samples.len() < MIN_GAUSSIAN_SAMPLES {
        return Err(Error::Precondition(format!(
            "Gaussian fit needs at least {MIN_GAUSSIAN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    gaussian_moments(samples)
}

/// Azzalini skew normal with density `2/scale * phi(z) * Phi(shape * z)`,
/// `z = (x - location)/scale`. Negative shape skews to the left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalFit {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl SkewNormalFit {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        if !location.is_finite() || !shape.is_finite() || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Precondition(format!(
                "invalid skew normal (location {location}, scale {scale}, shape {shape})"
            )));
        }
        Ok(Self { location, scale, shape })
    }

    fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        std::f64::consts::LN_2 - self.scale.ln() + log_normal_pdf(z) + log_normal_cdf(self.shape * z)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn skewness(&self) -> f64 {
        let b = self.delta() * (2.0 / PI).sqrt();
        0.5 * (4.0 - PI) * b.powi(3) / (1.0 - b * b).powf(1.5)
    }

    /// Mass below `x`, by adaptive quadrature of the density.
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    /// Mass the fit places outside `[0, 1]`, the support of a fraction.
    pub fn tail_mass_outside_unit(&self) -> f64 {
        self.cdf(0.0) + self.survival(1.0)
    }

    /// Standardized density `2 phi(z) Phi(shape z)`.
    fn standard_pdf(&self, z: f64) -> f64 {
        2.0 * (log_normal_pdf(z) + log_normal_cdf(self.shape * z)).exp()
    }

    /// Integral of the standardized density over `[a, b]`. The interval is
    /// split where the density changes character (the Gaussian envelope and
    /// the `Phi(shape z)` switch of width `1/|shape|` at zero) so no panel
    /// can step over a narrow feature.
    fn integrate_standard(&self, a: f64, b: f64) -> f64 {
        if a >= b {
            return 0.0;
        }
        let mut cuts = vec![a, b, 0.0, -1.0, 1.0, -2.0, 2.0, -4.0, 4.0, -8.0, 8.0];
        if self.shape != 0.0 {
            let w = 1.0 / self.shape.abs();
            for k in [1.0, 4.0, 16.0, 64.0] {
                cuts.push(k * w);
                cuts.push(-k * w);
            }
        }
        cuts.retain(|&t| t >= a && t <= b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let pieces = (cuts.len() - 1) as f64;
        let sum = |tol: f64| -> f64 {
            cuts.windows(2)
                .map(|w| integrate_adaptive(|z| self.standard_pdf(z), w[0], w[1], tol / pieces, 4000).value)
                .sum()
        };
        let value = sum(QUADRATURE_TOLERANCE);
        if value > 0.0 && value < 1e-3 {
            // Small tails: tighten to a relative target.
            return sum(value * 1e-10);
        }
        value
    }
}

impl FittedDistribution for SkewNormalFit {
    fn mean(&self) -> f64 {
        self.location + self.scale * self.delta() * (2.0 / PI).sqrt()
    }

    fn std_dev(&self) -> f64 {
        let d = self.delta();
        self.scale * (1.0 - 2.0 * d * d / PI).sqrt()
    }

    /// Integrates whichever tail is smaller, so both small and large
    /// probabilities keep their precision.
    fn survival(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let z = (x - self.location) / self.scale;
        if z <= -Z_CUTOFF {
            return 1.0;
        }
        if z >= Z_CUTOFF {
            return 0.0;
        }
        let lower = self.integrate_standard(-Z_CUTOFF, z);
        if lower <= 0.5 {
            (1.0 - lower).clamp(0.0, 1.0)
        } else {
            self.integrate_standard(z, Z_CUTOFF).clamp(0.0, 1.0)
        }
    }
}

/// Method-of-moments skew normal. Sample skewness is clipped just inside the
/// family's attainable range `|g| < 0.9953`.
pub fn skew_normal_from_moments(m: &SampleMoments) -> Result<SkewNormalFit> {
    if !(m.variance > 0.0) {
        return Err(Error::DegenerateSample("samples have zero variance".into()));
    }
    let g = m.skewness.clamp(-0.99, 0.99);
    let r = g.abs().powf(2.0 / 3.0);
    let k = (0.5 * (4.0 - PI)).powf(2.0 / 3.0);
    let delta = g.signum() * (0.5 * PI * r / (r + k)).sqrt();
    let delta = if g == 0.0 { 0.0 } else { delta };
    let shape = delta / (1.0 - delta * delta).sqrt();
    let scale = (m.variance / (1.0 - 2.0 * delta * delta / PI)).sqrt();
    let location = m.mean - scale * delta * (2.0 / PI).sqrt();
    SkewNormalFit::new(location, scale, shape)
}

const LIKELIHOOD_CHUNK: usize = 4096;

fn mean_negative_log_likelihood(samples: &[f64], location: f64, scale: f64, shape: f64) -> f64 {
    let fit = SkewNormalFit { location, scale, shape };
    let chunks = samples.len().div_ceil(LIKELIHOOD_CHUNK);
    // Fixed chunking keeps the summation order independent of thread count.
    let partial = map_indexed(chunks, |c| {
        let end = ((c + 1) * LIKELIHOOD_CHUNK).min(samples.len());
        samples[c * LIKELIHOOD_CHUNK..end].iter().map(|&x| fit.log_pdf(x)).sum::<f64>()
    });
    -partial.iter().sum::<f64>() / samples.len() as f64
}

/// Maximum-likelihood skew normal, started from the moment estimate and
/// refined by Nelder-Mead over `(location, ln scale, shape)`.
pub fn fit_skew_normal(samples: &[f64]) -> Result<SkewNormalFit> {
    if samples.len() < MIN_SKEW_NORMAL_SAMPLES {
        return Err(Error::Precondition(format!(
            "skew-normal fit needs at least {MIN_SKEW_NORMAL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("samples must be finite".into()));
    }
    if all_equal(samples) {
        return Err(Error::DegenerateSample("samples have zero variance".into()));
    }
    let moments = sample_moments(samples);
    let start = skew_normal_from_moments(&moments)?;
    let objective = |p: &[f64]| mean_negative_log_likelihood(samples, p[0], p[1].exp(), p[2]);
    let x0 = [start.location, start.scale.ln(), start.shape];
    let step = [0.1 * start.scale, 0.1, 0.5f64.max(0.1 * start.shape.abs())];
    let min = nelder_mead(objective, &x0, &step, 1e-12, 1e-7, SKEW_FIT_MAX_ITER);
    if !min.converged {
        return Err(Error::FitFailed {
            reason: format!("likelihood search did not converge in {} iterations", min.iterations),
            moment_estimate: Some(start),
        });
    }
    SkewNormalFit::new(min.x[0], min.x[1].exp(), min.x[2]).map_err(|e| Error::FitFailed {
        reason: e.to_string(),
        moment_estimate: Some(start),
    })
}

/// Probability that a token drawn from `fit` passes threshold `n_t`.
pub fn acceptance_probability<D: FittedDistribution + ?Sized>(fit: &D, n_t: f64) -> f64 {
    if n_t == f64::NEG_INFINITY {
        return 1.0;
    }
    if n_t == f64::INFINITY {
        return 0.0;
    }
    fit.survival(n_t)
}

/// Largest `n_T` with `p_b(n_T)^M >= target`, to [`THRESHOLD_TOLERANCE`].
pub fn choose_threshold<D: FittedDistribution + ?Sized>(bank_fit: &D, target_p_b: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Precondition("M must be at least 1".into()));
    }
    if !(target_p_b > 0.0) {
        return Err(Error::Precondition(format!("target acceptance {target_p_b} must be positive")));
    }
    if !(target_p_b < 1.0) {
        return Err(Error::UnachievableTarget { target: target_p_b, tokens: m });
    }
    let log_target = target_p_b.ln();
    let meets = |t: f64| m as f64 * acceptance_probability(bank_fit, t).ln() >= log_target;

    let centre = bank_fit.mean();
    let spread = bank_fit.std_dev();
    let mut step = spread;
    let mut lo = centre - step;
    while !meets(lo) {
        step *= 2.0;
        lo = centre - step;
        if !lo.is_finite() || step > 1e6 * spread.max(1.0) {
            return Err(Error::UnachievableTarget { target: target_p_b, tokens: m });
        }
    }
    let mut step = spread;
    let mut hi = centre + step;
    while meets(hi) {
        step *= 2.0;
        hi = centre + step;
        if !hi.is_finite() || step > 1e6 * spread.max(1.0) {
            return Err(Error::Precondition("acceptance does not fall with the threshold".into()));
        }
    }
    while hi - lo > THRESHOLD_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if meets(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Security figures for one coin size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinSecurity {
    pub m: usize,
    pub n_threshold: f64,
    /// Per-token acceptance at this threshold.
    pub p_b_token: f64,
    pub p_f_token: f64,
    pub p_b_m: f64,
    pub p_f_m: f64,
    #[serde(with = "log10_field")]
    pub log10_p_b_m: f64,
    #[serde(with = "log10_field")]
    pub log10_p_f_m: f64,
}

/// Threshold and coin-level acceptance for every `M`. Coin probabilities are
/// formed in log space; the decimal fields underflow to zero gracefully.
pub fn security_sweep<B, F>(bank_fit: &B, forger_fit: &F, target_p_b: f64, m_list: &[usize]) -> Result<Vec<CoinSecurity>>
where
    B: FittedDistribution + Sync + ?Sized,
    F: FittedDistribution + Sync + ?Sized,
{
    if m_list.is_empty() {
        return Err(Error::Precondition("M list must not be empty".into()));
    }
    map_indexed(m_list.len(), |i| {
        let m = m_list[i];
        let n_t = choose_threshold(bank_fit, target_p_b, m)?;
        let p_b = acceptance_probability(bank_fit, n_t);
        let p_f = acceptance_probability(forger_fit, n_t);
        let log10_p_b_m = m as f64 * p_b.log10();
        let log10_p_f_m = m as f64 * p_f.log10();
        Ok(CoinSecurity {
            m,
            n_threshold: n_t,
            p_b_token: p_b,
            p_f_token: p_f,
            p_b_m: 10f64.powf(log10_p_b_m),
            p_f_m: 10f64.powf(log10_p_f_m),
            log10_p_b_m,
            log10_p_f_m,
        })
    })
    .into_iter()
    .collect()
}

/// JSON has no infinities; a probability of exactly zero is written as the
/// string `"-inf"`.
mod log10_field {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected log10 value `{t}`"))),
        }
    }
}

/// Default coin sizes: perfect squares 1..49.
pub const DEFAULT_M_LIST: [usize; 7] = [1, 4, 9, 16, 25, 36, 49];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub schema_version: u32,
    pub profile: String,
    pub bank_fit: GaussianFit,
    pub forger_fit: SkewNormalFit,
    pub forger_skewness: f64,
    pub forger_tail_mass_outside_unit: f64,
    pub target_p_b: f64,
    /// Single-token threshold for the target.
    pub n_threshold: f64,
    pub p_b: f64,
    pub p_f: f64,
    #[serde(with = "log10_field")]
    pub log10_p_b: f64,
    #[serde(with = "log10_field")]
    pub log10_p_f: f64,
    pub per_m: Vec<CoinSecurity>,
}

impl SecurityReport {
    pub fn build(profile: impl Into<String>, bank_fit: GaussianFit, forger_fit: SkewNormalFit, target_p_b: f64, m_list: &[usize]) -> Result<Self> {
        let n_threshold = choose_threshold(&bank_fit, target_p_b, 1)?;
        let p_b = acceptance_probability(&bank_fit, n_threshold);
        let p_f = acceptance_probability(&forger_fit, n_threshold);
        let report = Self {
            schema_version: REPORT_SCHEMA_VERSION,
            profile: profile.into(),
            bank_fit,
            forger_fit,
            forger_skewness: forger_fit.skewness(),
            forger_tail_mass_outside_unit: forger_fit.tail_mass_outside_unit(),
            target_p_b,
            n_threshold,
            p_b,
            p_f,
            log10_p_b: p_b.log10(),
            log10_p_f: p_f.log10(),
            per_m: security_sweep(&bank_fit, &forger_fit, target_p_b, m_list)?,
        };
        report.check()?;
        Ok(report)
    }

    /// Verifies the report's internal consistency.
    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Precondition(format!("inconsistent security report: {msg}")));
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.p_b) || !in_unit(self.p_f) {
            return fail("probabilities outside [0, 1]".into());
        }
        let bank_ahead = self.bank_fit.mean > self.forger_fit.mean();
        if bank_ahead && self.p_b < self.p_f {
            return fail(format!("p_b {} < p_f {}", self.p_b, self.p_f));
        }
        for row in &self.per_m {
            let m = row.m as f64;
            if bank_ahead && row.p_b_token < row.p_f_token {
                return fail(format!("M = {}: p_b < p_f", row.m));
            }
            if (row.log10_p_b_m - m * row.p_b_token.log10()).abs() > 1e-9 * (1.0 + row.log10_p_b_m.abs())
                || (row.log10_p_f_m - m * row.p_f_token.log10()).abs() > 1e-9 * (1.0 + row.log10_p_f_m.abs())
            {
                return fail(format!("M = {}: coin probabilities are not p^M", row.m));
            }
            if row.p_b_m < self.target_p_b * (1.0 - 1e-12) {
                return fail(format!("M = {}: p_b^M below target", row.m));
            }
        }
        Ok(())
    }
}

/// One row of the acceptance-versus-threshold table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_threshold: f64,
    pub p_b: f64,
    pub p_f: f64,
}

/// `p_b` and `p_f` over `points` thresholds evenly spaced on `[lo, hi]`.
pub fn acceptance_curves<B, F>(bank_fit: &B, forger_fit: &F, lo: f64, hi: f64, points: usize) -> Vec<CurvePoint>
where
    B: FittedDistribution + Sync + ?Sized,
    F: FittedDistribution + Sync + ?Sized,
{
    map_indexed(points, |i| {
        let t = if points == 1 { lo } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 };
        CurvePoint {
            n_threshold: t,
            p_b: acceptance_probability(bank_fit, t),
            p_f: acceptance_probability(forger_fit, t),
        }
    })
}

/// Standard normal quantile, by bisection on [`normal_cdf`]. Used for
/// reporting only.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use rand_distr::{Distribution, Normal, SkewNormal};

    fn draws<D: Distribution<f64>>(d: D, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngSeed::new(seed, 0).rng();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(2.0) - 0.977_249_868_051_820_8).abs() < 1e-15);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // ln Phi agrees with the direct form where both are accurate and stays
        // finite far into the tail.
        for x in [-30.0, -5.0, -1.0, 0.5, 3.0] {
            assert!((log_normal_cdf(x) - normal_cdf(x).ln()).abs() < 1e-12 * (1.0 + normal_cdf(x).ln().abs()), "{x}");
        }
        let far = log_normal_cdf(-50.0);
        let expect = -1250.0 - 0.5 * (2.0 * PI).ln() - 50f64.ln() + (1.0f64 - 1.0 / 2500.0 + 3.0 / 6.25e6).ln();
        assert!((far - expect).abs() < 1e-9);
        assert!(((log_normal_cdf(-36.999) - log_normal_cdf(-37.001)) - 0.074).abs() < 1e-3);
    }

    #[test]
    fn gaussian_fit_round_trip() {
        let s = draws(Normal::new(0.92, 0.01).unwrap(), 100_000, 11);
        let f = fit_gaussian(&s).unwrap();
        assert!((0.9195..=0.9205).contains(&f.mean), "{f:?}");
        assert!((0.0099..=0.0101).contains(&f.std), "{f:?}");
    }

    #[test]
    fn gaussian_fit_edge_cases() {
        assert!(matches!(fit_gaussian(&[0.7; 20]), Err(Error::DegenerateSample(_))));
        assert!(matches!(fit_gaussian(&[0.9, 1.0]), Err(Error::Precondition(_))));
        let two = gaussian_moments(&[0.9, 1.0]).unwrap();
        assert!((two.mean - 0.95).abs() < 1e-15);
        assert!((two.std - 0.05).abs() < 1e-15);
    }

    #[test]
    fn skew_normal_round_trip() {
        let s = draws(SkewNormal::new(0.8, 0.15, -4.0).unwrap(), 100_000, 12);
        let f = fit_skew_normal(&s).unwrap();
        assert!((-5.0..=-3.0).contains(&f.shape), "{f:?}");
        assert!((f.location - 0.8).abs() < 0.01, "{f:?}");
        assert!((f.scale - 0.15).abs() < 0.01, "{f:?}");
    }

    #[test]
    fn skew_normal_on_symmetric_data() {
        let s = draws(Normal::new(0.6, 0.1).unwrap(), 100_000, 13);
        let f = fit_skew_normal(&s).unwrap();
        assert!(f.shape.abs() < 0.5, "{f:?}");
    }

    #[test]
    fn skew_normal_needs_fifty_samples() {
        let s: Vec<f64> = (0..49).map(|i| i as f64).collect();
        assert!(matches!(fit_skew_normal(&s), Err(Error::Precondition(_))));
        assert!(matches!(fit_skew_normal(&[1.0; 60]), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn skew_normal_density_normalizes() {
        for shape in [-8.0, -4.0, 0.0, 2.5] {
            let f = SkewNormalFit::new(0.6, 0.1, shape).unwrap();
            let r = integrate_adaptive(|x| f.pdf(x), 0.6 - 5.0, 0.6 + 5.0, 1e-12, 4000);
            assert!((r.value - 1.0).abs() < 1e-6, "{shape}: {}", r.value);
            assert!((f.survival(f64::MIN) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn skew_normal_moments_match_sampling() {
        let f = SkewNormalFit::new(0.8, 0.15, -4.0).unwrap();
        let s = draws(SkewNormal::new(0.8, 0.15, -4.0).unwrap(), 200_000, 14);
        let m = sample_moments(&s);
        assert!((m.mean - f.mean()).abs() < 1e-3);
        assert!((m.variance.sqrt() - f.std_dev()).abs() < 1e-3);
        assert!((m.skewness - f.skewness()).abs() < 0.03);
    }

    #[test]
    fn shape_zero_matches_gaussian() {
        let g = GaussianFit::new(0.7, 0.08).unwrap();
        let s = SkewNormalFit::new(0.7, 0.08, 0.0).unwrap();
        for i in 0..100 {
            let t = 0.2 + 1.0 * i as f64 / 99.0;
            let (a, b) = (acceptance_probability(&g, t), acceptance_probability(&s, t));
            assert!((a - b).abs() < 1e-9, "{t}: {a} vs {b}");
        }
    }

    #[test]
    fn skew_survival_agrees_with_sampling() {
        let f = SkewNormalFit::new(0.8, 0.15, -4.0).unwrap();
        let s = draws(SkewNormal::new(0.8, 0.15, -4.0).unwrap(), 200_000, 15);
        for t in [0.5, 0.65, 0.75, 0.85] {
            let emp = s.iter().filter(|&&x| x > t).count() as f64 / s.len() as f64;
            assert!((emp - f.survival(t)).abs() < 0.005, "{t}");
        }
    }

    #[test]
    fn survival_at_location_closed_form() {
        // P(X > location) = 1/2 + arctan(shape)/pi.
        for shape in [-1500.0, -50.0, -4.0, -0.3, 0.0, 3.0, 400.0] {
            let f = SkewNormalFit::new(0.7, 0.2, shape).unwrap();
            let expect = 0.5 + f64::atan(shape) / PI;
            assert!((f.survival(0.7) - expect).abs() < 1e-10, "{shape}");
        }
    }

    #[test]
    fn extreme_shape_keeps_narrow_features() {
        // The density switches off within 1/1500 of the location; a threshold
        // just below it still sees the half-normal mass in between.
        let f = SkewNormalFit::new(0.995, 0.44, -1500.0).unwrap();
        let z: f64 = (0.99 - 0.995) / 0.44;
        let half_normal = 2.0 * (0.5 - normal_cdf(z));
        let p = f.survival(0.99);
        assert!((p - half_normal).abs() < 3e-4, "{p} vs {half_normal}");
        let far = f.survival(0.999);
        assert!(far > 0.0 && far < 1e-40, "{far}");
    }

    #[test]
    fn infinite_thresholds() {
        let g = GaussianFit::new(0.9, 0.02).unwrap();
        let s = SkewNormalFit::new(0.6, 0.1, -3.0).unwrap();
        assert_eq!(acceptance_probability(&g, f64::NEG_INFINITY), 1.0);
        assert_eq!(acceptance_probability(&s, f64::NEG_INFINITY), 1.0);
        assert_eq!(acceptance_probability(&s, f64::INFINITY), 0.0);
    }

    #[test]
    fn threshold_matches_inverse_normal() {
        let g = GaussianFit::new(0.9215, 0.0271).unwrap();
        let t = choose_threshold(&g, 0.999, 1).unwrap();
        assert!((t - (0.9215 - 3.090_232_306_167_813 * 0.0271)).abs() < 1e-9, "{t}");
        let t2 = choose_threshold(&g, 0.999, 2).unwrap();
        assert!(t2 < t);
        assert!((acceptance_probability(&g, t2).powi(2) - 0.999).abs() < 1e-8);
        let median = choose_threshold(&g, 0.5, 1).unwrap();
        assert!((median - 0.9215).abs() < 1e-9);
        assert!(matches!(choose_threshold(&g, 1.0, 1), Err(Error::UnachievableTarget { .. })));
        assert!(matches!(choose_threshold(&g, 0.0, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn sweep_is_monotone_and_log_consistent() {
        let bank = GaussianFit::new(0.9215, 0.0271).unwrap();
        let forger = SkewNormalFit::new(0.75, 0.15, -3.0).unwrap();
        let ms: Vec<usize> = (1..=60).collect();
        let rows = security_sweep(&bank, &forger, 0.999, &ms).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].p_f_m <= w[0].p_f_m);
            assert!(w[1].n_threshold <= w[0].n_threshold);
        }
        for r in &rows {
            assert!(r.p_b_m >= 0.999 * (1.0 - 1e-12));
            let direct = r.p_f_token.powi(r.m as i32);
            if direct > 1e-300 {
                assert!((r.p_f_m - direct).abs() <= 1e-9 * direct, "{r:?}");
            }
        }
    }

    #[test]
    fn coin_scaling_arithmetic() {
        // Forger centred on the threshold: p_f = 1/2, so p_f^2 = 1/4.
        let bank = GaussianFit::new(1.0, 0.1).unwrap();
        let t = choose_threshold(&bank, 0.999, 2).unwrap();
        let forger = GaussianFit::new(t, 0.05).unwrap();
        let rows = security_sweep(&bank, &forger, 0.999, &[2]).unwrap();
        assert!((rows[0].p_f_token - 0.5).abs() < 1e-9);
        assert!((rows[0].p_f_m - 0.25).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_threshold() {
        let g = GaussianFit::new(0.92, 0.03).unwrap();
        let s = SkewNormalFit::new(0.75, 0.15, -3.0).unwrap();
        let curve = acceptance_curves(&g, &s, 0.0, 1.0, 500);
        for w in curve.windows(2) {
            assert!(w[1].p_b <= w[0].p_b);
            assert!(w[1].p_f <= w[0].p_f + 1e-13);
        }
    }

    #[test]
    fn report_invariants() {
        let g = GaussianFit::new(0.9215, 0.0271).unwrap();
        let s = SkewNormalFit::new(0.7, 0.15, -3.0).unwrap();
        let r = SecurityReport::build("test", g, s, 0.999, &DEFAULT_M_LIST).unwrap();
        assert!(r.p_b >= r.p_f);
        assert_eq!(r.per_m.len(), 7);
        let json = serde_json::to_string(&r).unwrap();
        let back: SecurityReport = serde_json::from_str(&json).unwrap();
        back.check().unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn zero_probability_serializes() {
        let g = GaussianFit::new(0.99, 0.001).unwrap();
        let s = SkewNormalFit::new(0.5, 0.01, 0.0).unwrap();
        let r = SecurityReport::build("narrow", g, s, 0.999, &[1, 4]).unwrap();
        assert_eq!(r.p_f, 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"log10_p_f\":\"-inf\""), "{json}");
        let back: SecurityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.log10_p_f, f64::NEG_INFINITY);
    }
}
