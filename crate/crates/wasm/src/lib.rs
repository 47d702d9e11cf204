//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function has a plain Rust twin returning [`qtoken::Result`]
//! so the logic is testable natively; the wrappers only convert errors.

use qtoken::attacker::{run_attack_campaign, CampaignOptions};
use qtoken::bank::{sample_bank_angles, self_acceptance, SamplingStrategy};
use qtoken::stats::{acceptance_curves, fit_gaussian, fit_skew_normal, DEFAULT_M_LIST};
use qtoken::{attacker_fraction, forge_token, BlochAngles, Error, HardwareProfile, RngSeed, SecurityReport};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Upper bound on simulated tokens per distribution, to keep the page responsive.
pub const MAX_DEMO_TOKENS: usize = 20_000;
const HISTOGRAM_BINS: usize = 50;
const CURVE_POINTS: usize = 201;

/// Built-in profiles as `[{name, c, sigma_exp_norm, shots}]`.
pub fn profiles_value() -> Value {
    HardwareProfile::builtins()
        .iter()
        .map(|p| {
            json!({
                "name": p.name,
                "c": p.contrast(),
                "sigma_exp_norm": p.observable.sigma_exp_norm(),
                "shots": p.shots_default,
            })
        })
        .collect()
}

/// Noiseless attacker reading over a `(z_b, phi_b)` grid, row-major in `z_b`.
/// `z_b` runs from -1 to 1 and `phi_b` over `[0, 2 pi)`.
pub fn attacker_map_values(c: f64, z_a: f64, phi_a: f64, n_z: usize, n_phi: usize) -> qtoken::Result<Vec<f64>> {
    if n_z < 2 || n_phi < 1 {
        return Err(Error::Precondition("grid needs at least 2 x 1 points".into()));
    }
    let axis = BlochAngles::from_z(z_a, phi_a)?;
    let mut out = Vec::with_capacity(n_z * n_phi);
    for i in 0..n_z {
        let z = -1.0 + 2.0 * i as f64 / (n_z - 1) as f64;
        for j in 0..n_phi {
            let bank = BlochAngles::from_z(z, std::f64::consts::TAU * j as f64 / n_phi as f64)?;
            out.push(attacker_fraction(c, &bank, &axis));
        }
    }
    Ok(out)
}

/// One forgery from a given attacker reading.
pub fn forge_value(c: f64, n_a: f64, z_a: f64, phi_a: f64, seed: u64) -> qtoken::Result<Value> {
    let axis = BlochAngles::from_z(z_a, phi_a)?;
    let o = forge_token(n_a, &axis, c, RngSeed::from_master(seed))?;
    Ok(json!({
        "alpha": o.alpha,
        "branch": o.branch.as_str(),
        "theta_f": o.forged.theta(),
        "phi_f": o.forged.phi(),
        "z_f": o.forged.z(),
        "overlap_with_axis": o.forged.overlap(&axis),
    }))
}

/// Simulates bank and forger distributions, fits them and returns the
/// security report with acceptance curves and sample histograms.
pub fn security_value(profile: &str, tokens: usize, seed: u64, target: f64) -> qtoken::Result<Value> {
    if tokens == 0 || tokens > MAX_DEMO_TOKENS {
        return Err(Error::Precondition(format!("token count must be in 1..={MAX_DEMO_TOKENS}")));
    }
    let profile = HardwareProfile::builtin(profile).ok_or_else(|| Error::Profile(format!("unknown profile `{profile}`")))?;
    let root = RngSeed::from_master(seed);
    let shots = profile.shots_default;

    let bank_angles = sample_bank_angles(SamplingStrategy::UniformSphere { count: tokens }, root.derive(0))?;
    let n_b = self_acceptance(&profile, &bank_angles, shots, root.derive(1))?;
    let forge_angles = sample_bank_angles(SamplingStrategy::UniformSphere { count: tokens }, root.derive(2))?;
    let axis = BlochAngles::from_z(1.0, 0.0)?;
    let n_f: Vec<f64> = run_attack_campaign(&profile, &forge_angles, &axis, shots, root.derive(3), CampaignOptions::default())?
        .iter()
        .map(|r| r.n_f)
        .collect();

    let bank_fit = fit_gaussian(&n_b)?;
    let forger_fit = match fit_skew_normal(&n_f) {
        Ok(f) => f,
        Err(Error::FitFailed { moment_estimate: Some(m), .. }) => m,
        Err(e) => return Err(e),
    };
    let report = SecurityReport::build(profile.name.clone(), bank_fit, forger_fit, target, &DEFAULT_M_LIST)?;
    let curves = acceptance_curves(&bank_fit, &forger_fit, 0.0, 1.0, CURVE_POINTS);
    Ok(json!({
        "report": report,
        "curves": curves,
        "histogram_bins": HISTOGRAM_BINS,
        "n_b_histogram": histogram(&n_b),
        "n_f_histogram": histogram(&n_f),
    }))
}

/// Densities on [0, 1] in `HISTOGRAM_BINS` equal bins.
fn histogram(values: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; HISTOGRAM_BINS];
    for &v in values {
        let i = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[i] += 1.0;
    }
    let norm = HISTOGRAM_BINS as f64 / values.len() as f64;
    counts.iter().map(|c| c * norm).collect()
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn profiles() -> String {
    profiles_value().to_string()
}

#[wasm_bindgen(js_name = attackerMap)]
pub fn attacker_map(c: f64, z_a: f64, phi_a: f64, n_z: usize, n_phi: usize) -> Result<Vec<f64>, JsError> {
    attacker_map_values(c, z_a, phi_a, n_z, n_phi).map_err(js_err)
}

#[wasm_bindgen]
pub fn forge(c: f64, n_a: f64, z_a: f64, phi_a: f64, seed: u64) -> Result<String, JsError> {
    forge_value(c, n_a, z_a, phi_a, seed).map(|v| v.to_string()).map_err(js_err)
}

#[wasm_bindgen]
pub fn security(profile: &str, tokens: usize, seed: u64, target: f64) -> Result<String, JsError> {
    security_value(profile, tokens, seed, target).map(|v| v.to_string()).map_err(js_err)
}
