//! Token issuance and authentication by the bank.
//!
//! The bank prepares each token with `R(theta_b, phi_b)` and later
//! authenticates it by applying the inverse rotation and reading the fraction
//! of the ensemble back in `|0>`. A token passes when that fraction strictly
//! exceeds the threshold `n_T`.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bloch::BlochAngles;
use crate::error::{Error, Result};
use crate::measurement::{simulate_measurement, MeasurementRecord};
use crate::par::map_indexed;
use crate::profile::HardwareProfile;
use crate::rng::RngSeed;

/// How the bank draws secret angles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingStrategy {
    /// `z = cos(theta)` uniform on `[-1, 1]`, `phi` uniform on `[0, 2pi)`.
    UniformSphere { count: usize },
    /// Cartesian product of evenly spaced `theta` in `[0, pi]` and `phi` in `[0, 2pi)`.
    LinearGrid { n_theta: usize, n_phi: usize },
    /// Same draw as `UniformSphere`; kept separate for reporting.
    EquatorWeighted { count: usize },
}

impl SamplingStrategy {
    pub fn len(&self) -> usize {
        match *self {
            Self::UniformSphere { count } | Self::EquatorWeighted { count } => count,
            Self::LinearGrid { n_theta, n_phi } => n_theta * n_phi,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformSphere { .. } => "uniform_sphere",
            Self::LinearGrid { .. } => "linear_grid",
            Self::EquatorWeighted { .. } => "equator_weighted",
        }
    }
}

pub fn sample_bank_angles(strategy: SamplingStrategy, seed: RngSeed) -> Result<Vec<BlochAngles>> {
    match strategy {
        SamplingStrategy::UniformSphere { count } | SamplingStrategy::EquatorWeighted { count } => {
            if count == 0 {
                return Err(Error::Precondition("token count must be at least 1".into()));
            }
            let mut rng = seed.rng();
            Ok((0..count).map(|_| uniform_sphere_point(&mut rng)).collect())
        }
        SamplingStrategy::LinearGrid { n_theta, n_phi } => {
            if n_theta == 0 || n_phi == 0 {
                return Err(Error::Precondition("grid dimensions must be at least 1".into()));
            }
            let thetas = crate::measurement::theta_grid(n_theta);
            let mut out = Vec::with_capacity(n_theta * n_phi);
            for &t in &thetas {
                for j in 0..n_phi {
                    out.push(BlochAngles::new(t, TAU * j as f64 / n_phi as f64)?);
                }
            }
            Ok(out)
        }
    }
}

/// A uniform draw on the sphere. Uniform `z` realizes the `sin(theta)/2` density.
pub fn uniform_sphere_point<R: Rng + ?Sized>(rng: &mut R) -> BlochAngles {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    BlochAngles::from_z(z, phi).expect("z drawn inside [-1, 1]")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSpec {
    pub token_id: String,
    pub angles: BlochAngles,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coin {
    coin_id: String,
    tokens: Vec<TokenSpec>,
    issued_with: String,
}

impl Coin {
    pub fn new(coin_id: impl Into<String>, tokens: Vec<TokenSpec>, issued_with: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Precondition("a coin needs at least one token".into()));
        }
        let mut ids = HashSet::new();
        for t in &tokens {
            if !ids.insert(t.token_id.as_str()) {
                return Err(Error::Precondition(format!("duplicate token id `{}`", t.token_id)));
            }
        }
        Ok(Self {
            coin_id: coin_id.into(),
            tokens,
            issued_with: issued_with.into(),
        })
    }

    /// Issues a coin of `m` tokens with angles drawn uniformly on the sphere.
    pub fn issue(coin_id: impl Into<String>, m: usize, profile: &HardwareProfile, seed: RngSeed) -> Result<Self> {
        let coin_id = coin_id.into();
        let angles = sample_bank_angles(SamplingStrategy::UniformSphere { count: m }, seed)?;
        let tokens = angles
            .into_iter()
            .enumerate()
            .map(|(i, angles)| TokenSpec {
                token_id: format!("{coin_id}-{i:03}"),
                angles,
            })
            .collect();
        Self::new(coin_id, tokens, profile.name.clone())
    }

    pub fn coin_id(&self) -> &str {
        &self.coin_id
    }

    pub fn tokens(&self) -> &[TokenSpec] {
        &self.tokens
    }

    pub fn issued_with(&self) -> &str {
        &self.issued_with
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Serializable form. Angles are only included when `reveal_secrets`.
    pub fn to_document(&self, policy: &AuthPolicy, reveal_secrets: bool) -> CoinDocument {
        CoinDocument {
            schema_version: COIN_SCHEMA_VERSION,
            coin_id: self.coin_id.clone(),
            profile: self.issued_with.clone(),
            policy: *policy,
            secrets_revealed: reveal_secrets,
            tokens: self
                .tokens
                .iter()
                .map(|t| TokenEntry {
                    token_id: t.token_id.clone(),
                    angles: reveal_secrets.then_some(t.angles),
                })
                .collect(),
        }
    }

    /// Rebuilds a coin from a document; fails if the secrets were redacted.
    pub fn from_document(doc: &CoinDocument) -> Result<Self> {
        let tokens = doc
            .tokens
            .iter()
            .map(|t| {
                t.angles
                    .map(|angles| TokenSpec {
                        token_id: t.token_id.clone(),
                        angles,
                    })
                    .ok_or_else(|| Error::Precondition(format!("token `{}` has redacted angles", t.token_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.coin_id.clone(), tokens, doc.profile.clone())
    }
}

pub const COIN_SCHEMA_VERSION: u32 = 1;

/// On-disk coin layout (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinDocument {
    pub schema_version: u32,
    pub coin_id: String,
    pub profile: String,
    pub policy: AuthPolicy,
    pub secrets_revealed: bool,
    pub tokens: Vec<TokenEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub token_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<BlochAngles>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum CoinRule {
    /// Every token must pass; coin acceptance is `p^M`.
    #[default]
    AllPass,
    /// At least `k` tokens must pass.
    KOfM { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthPolicy {
    pub n_threshold: f64,
    pub coin_rule: CoinRule,
}

impl AuthPolicy {
    pub fn all_pass(n_threshold: f64) -> Self {
        Self {
            n_threshold,
            coin_rule: CoinRule::AllPass,
        }
    }

    /// A token passes only when its fraction strictly exceeds the threshold.
    pub fn token_passes(&self, n: f64) -> bool {
        n > self.n_threshold
    }

    /// Coin decision from per-token fractions.
    pub fn decide(&self, per_token: &[f64]) -> Result<bool> {
        let passed = per_token.iter().filter(|&&n| self.token_passes(n)).count();
        match self.coin_rule {
            CoinRule::AllPass => Ok(passed == per_token.len()),
            CoinRule::KOfM { k } => {
                if k == 0 || k > per_token.len() {
                    return Err(Error::Precondition(format!("k = {k} is invalid for a coin of {} tokens", per_token.len())));
                }
                Ok(passed >= k)
            }
        }
    }
}

/// Fraction `n_b` read back by the bank after preparing and unrotating a token.
pub fn authenticate_token(profile: &HardwareProfile, token: &TokenSpec, shots: u64, seed: RngSeed) -> Result<f64> {
    Ok(simulate_measurement(profile, &token.angles, &token.angles, shots, seed)?.n_zero_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinVerdict {
    pub accepted: bool,
    pub per_token: Vec<f64>,
}

/// Authenticates every token on its own seed stream, then applies the coin rule.
pub fn authenticate_coin(profile: &HardwareProfile, coin: &Coin, policy: &AuthPolicy, shots: u64, seed: RngSeed) -> Result<CoinVerdict> {
    if let CoinRule::KOfM { k } = policy.coin_rule {
        if k == 0 || k > coin.len() {
            return Err(Error::Precondition(format!("k = {k} is invalid for a coin of {} tokens", coin.len())));
        }
    }
    let per_token = self_acceptance(profile, &coin.tokens.iter().map(|t| t.angles).collect::<Vec<_>>(), shots, seed)?;
    Ok(CoinVerdict {
        accepted: policy.decide(&per_token)?,
        per_token,
    })
}

/// `n_b` for each bank angle; token `i` uses stream `seed.derive(i)`.
pub fn self_acceptance(profile: &HardwareProfile, angles: &[BlochAngles], shots: u64, seed: RngSeed) -> Result<Vec<f64>> {
    Ok(self_acceptance_records(profile, angles, shots, seed)?
        .iter()
        .map(|r| r.n_zero_fraction)
        .collect())
}

/// Full measurement records behind [`self_acceptance`].
pub fn self_acceptance_records(profile: &HardwareProfile, angles: &[BlochAngles], shots: u64, seed: RngSeed) -> Result<Vec<MeasurementRecord>> {
    map_indexed(angles.len(), |i| simulate_measurement(profile, &angles[i], &angles[i], shots, seed.derive(i as u64)))
        .into_iter()
        .collect()
}

/// Mean of a quantity over one cell of a `(theta, phi)` partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleBin {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
}

/// Bins `values` on an `n_theta x n_phi` partition of the sphere. Empty
/// cells are omitted.
pub fn bin_by_angles(angles: &[BlochAngles], values: &[f64], n_theta: usize, n_phi: usize) -> Vec<AngleBin> {
    assert_eq!(angles.len(), values.len());
    let n_theta = n_theta.max(1);
    let n_phi = n_phi.max(1);
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); n_theta * n_phi];
    for (a, &v) in angles.iter().zip(values) {
        let i = ((a.theta() / PI * n_theta as f64) as usize).min(n_theta - 1);
        let j = ((a.phi() / TAU * n_phi as f64) as usize).min(n_phi - 1);
        let cell = &mut acc[i * n_phi + j];
        cell.0 += 1;
        cell.1 += v;
        cell.2 += v * v;
    }
    let mut out = Vec::new();
    for i in 0..n_theta {
        for j in 0..n_phi {
            let (count, sum, sum_sq) = acc[i * n_phi + j];
            if count == 0 {
                continue;
            }
            let k = count as f64;
            let mean = sum / k;
            let var = if count > 1 { ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0) } else { 0.0 };
            out.push(AngleBin {
                theta_lo: PI * i as f64 / n_theta as f64,
                theta_hi: PI * (i + 1) as f64 / n_theta as f64,
                phi_lo: TAU * j as f64 / n_phi as f64,
                phi_hi: TAU * (j + 1) as f64 / n_phi as f64,
                count,
                mean,
                std_err: (var / k).sqrt(),
            });
        }
    }
    out
}

/// Spread between the highest and lowest bin mean, in units of the standard
/// error of that difference. Bins with fewer than two samples are ignored.
pub fn angle_trend_score(bins: &[AngleBin]) -> f64 {
    let usable: Vec<&AngleBin> = bins.iter().filter(|b| b.count >= 2).collect();
    let (Some(hi), Some(lo)) = (
        usable.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)),
        usable.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)),
    ) else {
        return 0.0;
    };
    let se = (hi.std_err.powi(2) + lo.std_err.powi(2)).sqrt();
    if se == 0.0 {
        if hi.mean == lo.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (hi.mean - lo.mean) / se
    }
}
