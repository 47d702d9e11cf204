//! Hardware profiles: the observable model plus sampling defaults.
//!
//! Five built-in profiles carry the contrast and relative experimental noise
//! measured on superconducting processors. Profiles can also be loaded from a
//! TOML document:
//!
//! ```toml
//! name = "my-device"
//! c = 0.9            # or: n0 = 5.0, n1 = 95.0
//! sigma_exp_norm = 0.05
//! shots_default = 100
//! noise_mode = "photon_count"   # or "binary_readout"
//! scale = 100.0      # optional, n0 + n1 when `c` is given
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bloch::ObservableModel;
use crate::error::{Error, Result};

/// Total count scale `n0 + n1` used when a profile gives only normalized values.
pub const DEFAULT_COUNT_SCALE: f64 = 100.0;

pub const DEFAULT_SHOTS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Each collapsed shot emits Poisson counts with mean `n0` or `n1`.
    #[default]
    PhotonCount,
    /// Each shot yields one bit through a symmetric confusion matrix.
    BinaryReadout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    pub observable: ObservableModel,
    pub shots_default: u64,
    pub noise_mode: NoiseMode,
}

/// (name, contrast, sigma_exp / (n0 + n1))
const BUILTIN_TABLE: [(&str, f64, f64); 5] = [
    ("sherbrooke", 0.986, 1e-5),
    ("kyiv", 0.950, 0.026),
    ("osaka", 0.896, 0.158),
    ("brisbane", 0.843, 0.270),
    ("kyoto", 0.563, 0.377),
];

impl HardwareProfile {
    pub fn new(name: impl Into<String>, observable: ObservableModel, shots_default: u64, noise_mode: NoiseMode) -> Result<Self> {
        if shots_default == 0 {
            return Err(Error::Profile("shots_default must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            observable,
            shots_default,
            noise_mode,
        })
    }

    /// Profile from normalized contrast and noise at the default count scale.
    pub fn from_contrast(name: impl Into<String>, c: f64, sigma_exp_norm: f64) -> Result<Self> {
        let observable = ObservableModel::from_contrast(c, sigma_exp_norm, DEFAULT_COUNT_SCALE)?;
        Self::new(name, observable, DEFAULT_SHOTS, NoiseMode::PhotonCount)
    }

    /// All built-in profiles, ordered by decreasing contrast.
    pub fn builtins() -> Vec<HardwareProfile> {
        BUILTIN_TABLE
            .iter()
            .map(|&(name, c, s)| Self::from_contrast(name, c, s).expect("built-in table is valid"))
            .collect()
    }

    /// Looks up a built-in profile by case-insensitive name.
    pub fn builtin(name: &str) -> Option<HardwareProfile> {
        let lower = name.to_ascii_lowercase();
        Self::builtins().into_iter().find(|p| p.name == lower)
    }

    pub fn contrast(&self) -> f64 {
        self.observable.contrast()
    }

    pub fn with_noise_mode(mut self, mode: NoiseMode) -> Self {
        self.noise_mode = mode;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: ProfileDocument = toml::from_str(text).map_err(|e| Error::Profile(e.to_string()))?;
        doc.into_profile()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_document(&self) -> ProfileDocument {
        ProfileDocument {
            name: self.name.clone(),
            c: None,
            n0: Some(self.observable.n0),
            n1: Some(self.observable.n1),
            sigma_exp_norm: self.observable.sigma_exp_norm(),
            shots_default: self.shots_default,
            noise_mode: self.noise_mode,
            scale: None,
        }
    }
}

/// On-disk profile layout. Exactly one of `c` or the pair (`n0`, `n1`) is given.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDocument {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<f64>,
    pub sigma_exp_norm: f64,
    #[serde(default = "default_shots")]
    pub shots_default: u64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

fn default_shots() -> u64 {
    DEFAULT_SHOTS
}

impl ProfileDocument {
    pub fn into_profile(self) -> Result<HardwareProfile> {
        if !(self.sigma_exp_norm >= 0.0) {
            return Err(Error::Profile("sigma_exp_norm must be >= 0".into()));
        }
        let observable = match (self.c, self.n0, self.n1) {
            (Some(c), None, None) => {
                ObservableModel::from_contrast(c, self.sigma_exp_norm, self.scale.unwrap_or(DEFAULT_COUNT_SCALE))?
            }
            (None, Some(n0), Some(n1)) => {
                if self.scale.is_some() {
                    return Err(Error::Profile("`scale` only applies together with `c`".into()));
                }
                ObservableModel::new(n0, n1, self.sigma_exp_norm * (n0 + n1))?
            }
            _ => return Err(Error::Profile("give either `c` or both `n0` and `n1`".into())),
        };
        HardwareProfile::new(self.name, observable, self.shots_default, self.noise_mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_match_table() {
        let all = HardwareProfile::builtins();
        assert_eq!(all.len(), 5);
        let expect = [(0.986, 1e-5), (0.950, 0.026), (0.896, 0.158), (0.843, 0.270), (0.563, 0.377)];
        for (p, (c, s)) in all.iter().zip(expect) {
            assert!((p.contrast() - c).abs() < 1e-12, "{}", p.name);
            assert!((p.observable.sigma_exp_norm() - s).abs() < 1e-12, "{}", p.name);
            assert!((p.observable.scale() - 100.0).abs() < 1e-12);
            assert_eq!(p.shots_default, 100);
        }
        assert_eq!(HardwareProfile::builtin("Brisbane").unwrap().name, "brisbane");
        assert!(HardwareProfile::builtin("eagle").is_none());
    }

    #[test]
    fn toml_with_contrast() {
        let p = HardwareProfile::from_toml_str(
            "name = \"dev\"\nc = 0.5\nsigma_exp_norm = 0.1\nshots_default = 50\nnoise_mode = \"binary_readout\"\nscale = 1000.0\n",
        )
        .unwrap();
        assert_eq!(p.noise_mode, NoiseMode::BinaryReadout);
        assert_eq!(p.shots_default, 50);
        assert!((p.observable.n1 - 750.0).abs() < 1e-9);
        assert!((p.observable.sigma_exp - 100.0).abs() < 1e-9);
    }

    #[test]
    fn toml_with_eigenvalues_and_round_trip() {
        let p = HardwareProfile::from_toml_str("name = \"nv\"\nn0 = 100.0\nn1 = 70.0\nsigma_exp_norm = 0.0\n").unwrap();
        assert!(p.contrast() < 0.0);
        assert_eq!(p.shots_default, DEFAULT_SHOTS);
        let text = toml::to_string(&p.to_document()).unwrap();
        assert_eq!(HardwareProfile::from_toml_str(&text).unwrap(), p);
    }

    #[test]
    fn toml_rejects_ambiguous_or_invalid() {
        assert!(HardwareProfile::from_toml_str("name = \"x\"\nc = 0.5\nn0 = 1.0\nn1 = 2.0\nsigma_exp_norm = 0.0\n").is_err());
        assert!(HardwareProfile::from_toml_str("name = \"x\"\nsigma_exp_norm = 0.0\n").is_err());
        assert!(HardwareProfile::from_toml_str("name = \"x\"\nc = 0.5\nsigma_exp_norm = 0.0\nshots_default = 0\n").is_err());
        assert!(HardwareProfile::from_toml_str("name = \"x\"\nc = 1.5\nsigma_exp_norm = 0.0\n").is_err());
        assert!(HardwareProfile::from_toml_str("name = \"x\"\nc = 0.5\nsigma_exp_norm = 0.0\nbogus = 1\n").is_err());
    }
}
