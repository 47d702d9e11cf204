//! Simulation and security analysis of ensemble quantum tokens.
//!
//! A bank hides a secret state `(theta_b, phi_b)` in each token. Authentication
//! unrotates the token and reads the fraction of the ensemble left in `|0>`.
//! A forger who measures along some other axis learns only that fraction and
//! must guess the rest. This crate models the readout noise, the bank, the
//! forger and the resulting acceptance statistics.
//!
//! ```
//! use qtoken::{BlochAngles, attacker_fraction};
//!
//! let token = BlochAngles::new(0.4, 1.0).unwrap();
//! assert!((attacker_fraction(0.9, &token, &token) - 0.95).abs() < 1e-12);
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacker;
pub mod bank;
pub mod bloch;
pub mod error;
pub mod measurement;
mod optimize;
mod par;
pub mod profile;
pub mod quadrature;
pub mod replay;
pub mod rng;
pub mod stats;

pub use attacker::{forge_token, run_attack_campaign, Branch, CampaignOptions, CampaignRow, ForgeOutcome};
pub use bank::{authenticate_coin, authenticate_token, sample_bank_angles, AuthPolicy, Coin, CoinRule, SamplingStrategy, TokenSpec};
pub use bloch::{attacker_fraction, expectation_n, total_uncertainty, BlochAngles, ObservableModel};
pub use error::{Error, Result};
pub use measurement::{fit_noise_model, rabi_scan, simulate_measurement, MeasurementRecord, RabiScan};
pub use profile::{HardwareProfile, NoiseMode};
pub use rng::{RngSeed, DEFAULT_MASTER_SEED};
pub use stats::{acceptance_probability, choose_threshold, fit_gaussian, fit_skew_normal, GaussianFit, SecurityReport, SkewNormalFit};
