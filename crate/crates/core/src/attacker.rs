//! The forger: measure a token along a chosen axis, invert the measured
//! fraction onto its solution line, pick a state on that line and hand it to
//! the bank.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{uniform_sphere_point, TokenSpec};
use crate::bloch::{attacker_fraction, phi_f_solutions, zf_interval, BlochAngles};
use crate::error::{Error, Result};
use crate::measurement::simulate_measurement;
use crate::par::map_indexed;
use crate::profile::HardwareProfile;
use crate::rng::RngSeed;

/// `|sin theta|` below this counts as a pole.
pub const POLE_TOLERANCE: f64 = 1e-12;
/// Slack on `|alpha / cos(theta_a)| <= 1` for the pole inversion.
pub const INVERSION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

/// How the forged state was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    PoleInversion,
    IntervalSample(Sign),
    /// No admissible state: the forger guesses uniformly on the sphere.
    RandomFallback,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::PoleInversion => "pole_inversion",
            Branch::IntervalSample(Sign::Plus) => "interval_plus",
            Branch::IntervalSample(Sign::Minus) => "interval_minus",
            Branch::RandomFallback => "random_fallback",
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Branch::RandomFallback)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeOutcome {
    pub n_a_measured: f64,
    /// `(2 n_a - 1)/c`; NaN when `c = 0`.
    pub alpha: f64,
    pub branch: Branch,
    pub forged: BlochAngles,
}

/// The forger's reading of a bank token along `attack_axis`.
pub fn attack_measure(profile: &HardwareProfile, token: &TokenSpec, attack_axis: &BlochAngles, shots: u64, seed: RngSeed) -> Result<f64> {
    Ok(simulate_measurement(profile, &token.angles, attack_axis, shots, seed)?.n_zero_fraction)
}

/// Picks a forged state consistent with the measured fraction `n_a`.
///
/// Out-of-range readings fall back to a uniform guess instead of being
/// clamped onto the sphere.
pub fn forge_token(n_a: f64, attack_axis: &BlochAngles, c: f64, seed: RngSeed) -> Result<ForgeOutcome> {
    if !(c.abs() <= 1.0) {
        return Err(Error::Precondition(format!("contrast {c} outside [-1, 1]")));
    }
    let mut rng = seed.rng();
    let fallback = |rng: &mut rand_chacha::ChaCha8Rng, alpha: f64| ForgeOutcome {
        n_a_measured: n_a,
        alpha,
        branch: Branch::RandomFallback,
        forged: uniform_sphere_point(rng),
    };
    if c == 0.0 {
        return Ok(fallback(&mut rng, f64::NAN));
    }
    let alpha = (2.0 * n_a - 1.0) / c;
    let theta_a = attack_axis.theta();

    if theta_a.sin().abs() < POLE_TOLERANCE {
        let ratio = alpha / theta_a.cos();
        if ratio.abs() > 1.0 + INVERSION_TOLERANCE {
            return Ok(fallback(&mut rng, alpha));
        }
        let theta_f = ratio.clamp(-1.0, 1.0).acos();
        let phi_f = rng.random_range(0.0..TAU);
        return Ok(ForgeOutcome {
            n_a_measured: n_a,
            alpha,
            branch: Branch::PoleInversion,
            forged: BlochAngles::new(theta_f, phi_f)?,
        });
    }

    let Some(interval) = zf_interval(alpha, theta_a) else {
        return Ok(fallback(&mut rng, alpha));
    };
    let z_f = if interval.width() > 0.0 {
        rng.random_range(interval.lo..=interval.hi)
    } else {
        interval.lo
    };
    let theta_f = z_f.clamp(-1.0, 1.0).acos();
    let plus = rng.random_bool(0.5);
    if theta_f.sin().abs() < POLE_TOLERANCE {
        let phi_f = rng.random_range(0.0..TAU);
        return Ok(ForgeOutcome {
            n_a_measured: n_a,
            alpha,
            branch: Branch::IntervalSample(if plus { Sign::Plus } else { Sign::Minus }),
            forged: BlochAngles::new(theta_f, phi_f)?,
        });
    }
    let Some((phi_plus, phi_minus)) = phi_f_solutions(alpha, theta_a, attack_axis.phi(), theta_f) else {
        return Ok(fallback(&mut rng, alpha));
    };
    let (sign, phi_f) = if plus { (Sign::Plus, phi_plus) } else { (Sign::Minus, phi_minus) };
    Ok(ForgeOutcome {
        n_a_measured: n_a,
        alpha,
        branch: Branch::IntervalSample(sign),
        forged: BlochAngles::new(theta_f, phi_f)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignOptions {
    /// Invert the exact expected fraction instead of a sampled reading.
    pub noiseless_attack: bool,
    /// Skip the measurement and always guess uniformly.
    pub force_fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub bank: BlochAngles,
    pub attack_axis: BlochAngles,
    pub outcome: ForgeOutcome,
    pub n_f: f64,
}

/// Attacks every bank token once. Token `i` draws from `seed.derive(i)`; the
/// returned rows follow the input order.
pub fn run_attack_campaign(
    profile: &HardwareProfile,
    bank_angles: &[BlochAngles],
    attack_axis: &BlochAngles,
    shots: u64,
    seed: RngSeed,
    options: CampaignOptions,
) -> Result<Vec<CampaignRow>> {
    if bank_angles.is_empty() {
        return Err(Error::Precondition("bank token list is empty".into()));
    }
    if shots == 0 {
        return Err(Error::Precondition("shots must be at least 1".into()));
    }
    let c = profile.contrast();
    map_indexed(bank_angles.len(), |i| {
        let bank = bank_angles[i];
        let token_seed = seed.derive(i as u64);
        let outcome = if options.force_fallback {
            let mut rng = token_seed.derive(1).rng();
            ForgeOutcome {
                n_a_measured: f64::NAN,
                alpha: f64::NAN,
                branch: Branch::RandomFallback,
                forged: uniform_sphere_point(&mut rng),
            }
        } else {
            let n_a = if options.noiseless_attack {
                attacker_fraction(c, &bank, attack_axis)
            } else {
                simulate_measurement(profile, &bank, attack_axis, shots, token_seed.derive(0))?.n_zero_fraction
            };
            forge_token(n_a, attack_axis, c, token_seed.derive(1))?
        };
        let n_f = simulate_measurement(profile, &outcome.forged, &bank, shots, token_seed.derive(2))?.n_zero_fraction;
        Ok(CampaignRow {
            bank,
            attack_axis: *attack_axis,
            outcome,
            n_f,
        })
    })
    .into_iter()
    .collect()
}

pub const CAMPAIGN_HEADER: [&str; 9] = ["theta_b", "phi_b", "theta_a", "phi_a", "n_a", "branch", "theta_f", "phi_f", "n_f"];

pub fn write_campaign_csv<W: Write>(rows: &[CampaignRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CAMPAIGN_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(&[
            r.bank.theta().to_string(),
            r.bank.phi().to_string(),
            r.attack_axis.theta().to_string(),
            r.attack_axis.phi().to_string(),
            r.outcome.n_a_measured.to_string(),
            r.outcome.branch.as_str().to_string(),
            r.outcome.forged.theta().to_string(),
            r.outcome.forged.phi().to_string(),
            r.n_f.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{sample_bank_angles, SamplingStrategy};
    use std::f64::consts::PI;

    fn mean(v: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = v.collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn pole_inversion_example() {
        let c = 0.947;
        let n_a = 0.9735;
        let out = forge_token(n_a, &BlochAngles::NORTH, c, RngSeed::new(1, 0)).unwrap();
        assert_eq!(out.branch, Branch::PoleInversion);
        // (2 * 0.9735 - 1) / 0.947 is 1 to rounding, so the forged state sits on the pole.
        assert!((out.alpha - 1.0).abs() < 1e-12);
        assert!(out.forged.theta() < 1e-6);
        assert!((attacker_fraction(c, &out.forged, &BlochAngles::NORTH) - n_a).abs() < 1e-9);

        let out = forge_token(0.8, &BlochAngles::NORTH, c, RngSeed::new(1, 0)).unwrap();
        assert!((out.forged.theta() - ((1.6 - 1.0) / c).acos()).abs() < 1e-12);
    }

    #[test]
    fn south_pole_axis_inverts_with_sign() {
        let out = forge_token(0.8, &BlochAngles::SOUTH, 0.9, RngSeed::new(3, 0)).unwrap();
        assert_eq!(out.branch, Branch::PoleInversion);
        assert!((attacker_fraction(0.9, &out.forged, &BlochAngles::SOUTH) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn equator_axis_half_fraction() {
        let axis = BlochAngles::new(PI / 2.0, 0.0).unwrap();
        let out = forge_token(0.5, &axis, 0.7, RngSeed::new(2, 0)).unwrap();
        assert_eq!(out.alpha, 0.0);
        assert!(matches!(out.branch, Branch::IntervalSample(_)));
        assert!((attacker_fraction(0.7, &out.forged, &axis) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_falls_back() {
        let out = forge_token(1.0, &BlochAngles::NORTH, 0.5, RngSeed::new(2, 0)).unwrap();
        assert_eq!(out.alpha, 2.0);
        assert_eq!(out.branch, Branch::RandomFallback);
        let out = forge_token(0.7, &BlochAngles::NORTH, 0.0, RngSeed::new(2, 0)).unwrap();
        assert_eq!(out.branch, Branch::RandomFallback);
        assert!(forge_token(0.7, &BlochAngles::NORTH, 1.5, RngSeed::new(2, 0)).is_err());
    }

    #[test]
    fn both_branches_occur() {
        let axis = BlochAngles::new(1.0, 0.3).unwrap();
        let mut seen = [false; 2];
        for i in 0..64 {
            match forge_token(0.6, &axis, 0.9, RngSeed::new(7, i)).unwrap().branch {
                Branch::IntervalSample(Sign::Plus) => seen[0] = true,
                Branch::IntervalSample(Sign::Minus) => seen[1] = true,
                b => panic!("{b:?}"),
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn pole_axis_reading_ignores_azimuth() {
        let p = HardwareProfile::builtin("kyiv").unwrap();
        let a = TokenSpec {
            token_id: "a".into(),
            angles: BlochAngles::new(1.1, 0.2).unwrap(),
        };
        let b = TokenSpec {
            token_id: "b".into(),
            angles: BlochAngles::new(1.1, 4.0).unwrap(),
        };
        let s = RngSeed::new(5, 5);
        assert_eq!(
            attack_measure(&p, &a, &BlochAngles::NORTH, 100, s).unwrap(),
            attack_measure(&p, &b, &BlochAngles::NORTH, 100, s).unwrap()
        );
    }

    #[test]
    fn campaign_order_and_schema() {
        let p = HardwareProfile::builtin("brisbane").unwrap();
        let bank = sample_bank_angles(SamplingStrategy::UniformSphere { count: 50 }, RngSeed::new(1, 1)).unwrap();
        let rows = run_attack_campaign(&p, &bank, &BlochAngles::NORTH, 100, RngSeed::new(2, 0), CampaignOptions::default()).unwrap();
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().zip(&bank).all(|(r, b)| r.bank == *b));
        let mut buf = Vec::new();
        write_campaign_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta_b,phi_b,theta_a,phi_a,n_a,branch,theta_f,phi_f,n_f\n"));
        assert_eq!(text.lines().count(), 51);
    }

    #[test]
    fn fallback_campaign_centres_on_half() {
        let p = HardwareProfile::builtin("kyiv").unwrap();
        let bank = sample_bank_angles(SamplingStrategy::UniformSphere { count: 4000 }, RngSeed::new(1, 2)).unwrap();
        let opts = CampaignOptions {
            force_fallback: true,
            ..Default::default()
        };
        let rows = run_attack_campaign(&p, &bank, &BlochAngles::NORTH, 100, RngSeed::new(3, 0), opts).unwrap();
        assert!(rows.iter().all(|r| r.outcome.branch.is_fallback()));
        let (m, se) = mean(rows.iter().map(|r| r.n_f));
        assert!((m - 0.5).abs() < 5.0 * se, "{m} +- {se}");
    }
}
