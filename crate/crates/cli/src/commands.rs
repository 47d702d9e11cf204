use std::f64::consts::{PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qtoken::attacker::{run_attack_campaign, CampaignOptions, CampaignRow, CAMPAIGN_HEADER};
use qtoken::bank::{angle_trend_score, bin_by_angles, sample_bank_angles, self_acceptance_records, AngleBin, AuthPolicy, Coin, CoinRule, SamplingStrategy};
use qtoken::bloch::{attacker_fraction, BlochAngles};
use qtoken::measurement::{fit_noise_model, rabi_scan_records, theta_grid, MeasurementRecord, RabiScan};
use qtoken::replay::{ingest_replay, write_replay};
use qtoken::stats::{acceptance_curves, fit_gaussian, fit_skew_normal, sample_moments, skew_normal_from_moments, GaussianFit, SecurityReport, SkewNormalFit};
use qtoken::{authenticate_coin, simulate_measurement, HardwareProfile, RngSeed};

use crate::args::{AttackAxes, AttackScanArgs, BankBenchArgs, CoinArgs, Command, Common, FitArgs, FitKind, ForgeBenchArgs, RabiArgs, SecurityArgs, Strategy};
use crate::output::{Cell, OutputDir, Table};
use crate::svg::{line_plot, Series};
use crate::{CliError, ErrorKind, Outcome};

pub const SCHEMA_VERSION: u32 = 1;

// Stream indices under the master seed, one per pipeline stage.
const STREAM_RABI: u64 = 1;
const STREAM_BANK_ANGLES: u64 = 2;
const STREAM_BANK_AUTH: u64 = 3;
const STREAM_FORGE_ANGLES: u64 = 4;
const STREAM_FORGE: u64 = 5;
const STREAM_SCAN: u64 = 6;
const STREAM_COIN: u64 = 7;

pub fn dispatch(cli: &crate::Cli) -> Result<Outcome, CliError> {
    let common = &cli.common;
    let profile = load_profile(&common.profile)?;
    let shots = common.shots.unwrap_or(profile.shots_default);
    if shots == 0 {
        return Err(CliError::usage("--shots must be at least 1"));
    }
    let ctx = Context {
        common,
        profile,
        shots,
        root: RngSeed::from_master(common.seed),
    };
    match &cli.command {
        Command::Rabi(a) => cmd_rabi(&ctx, a),
        Command::BankBench(a) => cmd_bank_bench(&ctx, a),
        Command::AttackScan(a) => cmd_attack_scan(&ctx, a),
        Command::ForgeBench(a) => cmd_forge_bench(&ctx, a),
        Command::Security(a) => cmd_security(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Coin(a) => cmd_coin(&ctx, a),
    }
}

struct Context<'a> {
    common: &'a Common,
    profile: HardwareProfile,
    shots: u64,
    root: RngSeed,
}

impl Context<'_> {
    fn out(&self) -> Result<OutputDir, CliError> {
        OutputDir::create(&self.common.out, self.common.format)
    }

    fn stream(&self, stage: u64) -> RngSeed {
        self.root.derive(stage)
    }
}

/// A built-in name, or a path to a TOML profile. Files win over built-ins.
pub fn load_profile(arg: &str) -> Result<HardwareProfile, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(HardwareProfile::from_file(path)?);
    }
    HardwareProfile::builtin(arg).ok_or_else(|| {
        let names: Vec<String> = HardwareProfile::builtins().into_iter().map(|p| p.name).collect();
        CliError::usage(format!("unknown profile `{arg}`; built-ins are {} or a TOML file path", names.join(", ")))
    })
}

fn finish(out: OutputDir, summary: Vec<String>, warnings: Vec<String>) -> Outcome {
    Outcome {
        files: out.written,
        summary,
        warnings,
    }
}

// ---------------------------------------------------------------- rabi

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiFitDocument {
    pub schema_version: u32,
    pub profile: String,
    pub points: usize,
    pub records: usize,
    pub c: f64,
    pub sigma_exp_norm: f64,
    pub n0: f64,
    pub n1: f64,
    pub sigma_exp: f64,
}

/// Aggregation and noise fit shared by `rabi` and `fit --kind rabi`.
pub fn rabi_fit(profile: &HardwareProfile, records: &[MeasurementRecord]) -> Result<(RabiScan, RabiFitDocument), CliError> {
    let scan = RabiScan::from_records(&profile.observable, records)?;
    let model = fit_noise_model(&scan)?;
    let doc = RabiFitDocument {
        schema_version: SCHEMA_VERSION,
        profile: profile.name.clone(),
        points: scan.points.len(),
        records: records.len(),
        c: model.contrast(),
        sigma_exp_norm: model.sigma_exp_norm(),
        n0: model.n0,
        n1: model.n1,
        sigma_exp: model.sigma_exp,
    };
    Ok((scan, doc))
}

fn cmd_rabi(ctx: &Context, a: &RabiArgs) -> Result<Outcome, CliError> {
    if a.points < 5 {
        return Err(CliError::usage(format!("--points must be at least 5, got {}", a.points)));
    }
    if a.reps < 2 {
        return Err(CliError::usage("--reps must be at least 2"));
    }
    let grid = theta_grid(a.points);
    let records: Vec<MeasurementRecord> = rabi_scan_records(&ctx.profile, &grid, ctx.shots, a.reps, ctx.stream(STREAM_RABI))?
        .into_iter()
        .flatten()
        .collect();
    let (scan, doc) = rabi_fit(&ctx.profile, &records)?;

    let mut out = ctx.out()?;
    let mut table = Table::new(&["theta", "mean_norm", "std_norm"]);
    for p in &scan.points {
        table.push(vec![p.theta.into(), p.mean_norm.into(), p.std_norm.into()]);
    }
    out.write_table("rabi", &table)?;
    let mut replay = Vec::new();
    write_replay(&records, &mut replay)?;
    out.write_bytes("rabi_records.csv", &replay)?;
    out.write_json("rabi_fit.json", &doc)?;
    if ctx.common.svg {
        let svg = line_plot(
            &format!("Rabi scan ({})", ctx.profile.name),
            "theta",
            "normalized counts",
            &[
                Series {
                    label: "mean",
                    points: scan.points.iter().map(|p| (p.theta, p.mean_norm)).collect(),
                },
                Series {
                    label: "std",
                    points: scan.points.iter().map(|p| (p.theta, p.std_norm)).collect(),
                },
            ],
        );
        out.write_bytes("rabi.svg", svg.as_bytes())?;
    }
    let summary = vec![format!(
        "{}: fitted c = {:.4} (profile {:.4}), sigma_exp/(n0+n1) = {:.4} (profile {:.4})",
        ctx.profile.name,
        doc.c,
        ctx.profile.contrast(),
        doc.sigma_exp_norm,
        ctx.profile.observable.sigma_exp_norm()
    )];
    Ok(finish(out, summary, Vec::new()))
}

// ---------------------------------------------------------------- bank-bench

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankFitDocument {
    pub schema_version: u32,
    pub profile: String,
    pub strategy: String,
    pub tokens: usize,
    /// `(1 + c)/2` for the profile's contrast.
    pub expected_mean: f64,
    /// `None` when every sample is identical.
    pub gaussian: Option<GaussianFit>,
    pub angle_bins: (usize, usize),
    /// Spread of bin means over the standard error of that spread.
    pub angle_trend_score: f64,
}

fn bank_strategy(a: &BankBenchArgs) -> SamplingStrategy {
    match a.strategy {
        Strategy::Uniform => SamplingStrategy::UniformSphere { count: a.count },
        Strategy::Equator => SamplingStrategy::EquatorWeighted { count: a.count },
        Strategy::Grid => SamplingStrategy::LinearGrid {
            n_theta: a.grid.0,
            n_phi: a.grid.1,
        },
    }
}

/// Bank angles and their self-acceptance records. `security` reuses this so
/// its bank distribution matches a default `bank-bench` run.
fn simulate_bank(ctx: &Context, strategy: SamplingStrategy) -> Result<(Vec<BlochAngles>, Vec<MeasurementRecord>), CliError> {
    let angles = sample_bank_angles(strategy, ctx.stream(STREAM_BANK_ANGLES))?;
    let records = self_acceptance_records(&ctx.profile, &angles, ctx.shots, ctx.stream(STREAM_BANK_AUTH))?;
    Ok((angles, records))
}

fn cmd_bank_bench(ctx: &Context, a: &BankBenchArgs) -> Result<Outcome, CliError> {
    let strategy = bank_strategy(a);
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be at least 1"));
    }
    let (angles, records) = simulate_bank(ctx, strategy)?;
    let n_b: Vec<f64> = records.iter().map(|r| r.n_zero_fraction).collect();
    let mut warnings = Vec::new();

    let gaussian = match fit_gaussian(&n_b) {
        Ok(f) => Some(f),
        Err(qtoken::Error::DegenerateSample(m)) => {
            warnings.push(format!("no Gaussian fit: {m}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let bins = bin_by_angles(&angles, &n_b, a.bins, a.bins);
    let doc = BankFitDocument {
        schema_version: SCHEMA_VERSION,
        profile: ctx.profile.name.clone(),
        strategy: strategy.name().to_string(),
        tokens: n_b.len(),
        expected_mean: 0.5 * (1.0 + ctx.profile.contrast().abs()),
        gaussian,
        angle_bins: (a.bins, a.bins),
        angle_trend_score: angle_trend_score(&bins),
    };

    let mut out = ctx.out()?;
    let mut samples = Table::new(&["token", "theta_b", "phi_b", "n_b"]);
    for (i, (ang, n)) in angles.iter().zip(&n_b).enumerate() {
        samples.push(vec![i.into(), ang.theta().into(), ang.phi().into(), (*n).into()]);
    }
    out.write_table("bank_samples", &samples)?;
    let mut replay = Vec::new();
    write_replay(&records, &mut replay)?;
    out.write_bytes("bank_records.csv", &replay)?;
    out.write_json("bank_fit.json", &doc)?;
    out.write_table("bank_angle_bins", &angle_bin_table(&bins))?;
    if ctx.common.svg {
        let svg = line_plot(
            &format!("Self-acceptance ({})", ctx.profile.name),
            "n_b",
            "tokens",
            &[Series {
                label: "n_b",
                points: histogram(&n_b, 50),
            }],
        );
        out.write_bytes("bank_hist.svg", svg.as_bytes())?;
    }
    let mut summary = vec![format!("{}: {} tokens, expected mean n_b {:.4}", ctx.profile.name, doc.tokens, doc.expected_mean)];
    if let Some(g) = gaussian {
        summary.push(format!("fitted n_b = {:.4} +- {:.4}", g.mean, g.std));
    }
    summary.push(format!("angle trend score {:.2} (standard errors)", doc.angle_trend_score));
    Ok(finish(out, summary, warnings))
}

fn angle_bin_table(bins: &[AngleBin]) -> Table {
    let mut t = Table::new(&["theta_lo", "theta_hi", "phi_lo", "phi_hi", "count", "mean_n_b", "std_err"]);
    for b in bins {
        t.push(vec![
            b.theta_lo.into(),
            b.theta_hi.into(),
            b.phi_lo.into(),
            b.phi_hi.into(),
            b.count.into(),
            b.mean.into(),
            b.std_err.into(),
        ]);
    }
    t
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, values.len() as f64)];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    counts.iter().enumerate().map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64)).collect()
}

// ---------------------------------------------------------------- attack-scan

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisScanSummary {
    pub z_a: f64,
    pub phi_a: f64,
    pub residual_rms: f64,
    pub std_err_rms: f64,
    /// Spread of `n_a` across `phi_b` at fixed `z_b`, relative to the
    /// counting error. Near 1 when the reading does not depend on `phi_b`.
    pub phi_spread_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScanSummary {
    pub schema_version: u32,
    pub profile: String,
    pub bank_grid: (usize, usize),
    pub axes: Vec<AxisScanSummary>,
}

fn parse_axes(z_a: &[f64], phi_a: &[f64]) -> Result<Vec<BlochAngles>, CliError> {
    if z_a.is_empty() || phi_a.is_empty() {
        return Err(CliError::usage("attack axis lists must not be empty"));
    }
    let mut axes = Vec::with_capacity(z_a.len() * phi_a.len());
    for &z in z_a {
        if !(-1.0..=1.0).contains(&z) {
            return Err(CliError::usage(format!("z_a = {z} is outside [-1, 1]")));
        }
        for &phi in phi_a {
            if !phi.is_finite() {
                return Err(CliError::usage("phi_a must be finite"));
            }
            axes.push(BlochAngles::from_z(z, phi)?);
        }
    }
    Ok(axes)
}

fn cmd_attack_scan(ctx: &Context, a: &AttackScanArgs) -> Result<Outcome, CliError> {
    let axes = parse_axes(&a.z_a, &a.phi_a)?;
    let (nz, nphi) = a.bank_grid;
    let z_b: Vec<f64> = (0..nz).map(|i| if nz == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (nz - 1) as f64 }).collect();
    let phi_b: Vec<f64> = (0..nphi).map(|j| TAU * j as f64 / nphi as f64).collect();
    let bank: Vec<BlochAngles> = z_b
        .iter()
        .flat_map(|&z| phi_b.iter().map(move |&p| (z, p)))
        .map(|(z, p)| BlochAngles::from_z(z, p))
        .collect::<qtoken::Result<_>>()?;
    let c = ctx.profile.contrast();
    let seed = ctx.stream(STREAM_SCAN);

    let mut table = Table::new(&["z_b", "phi_b", "z_a", "phi_a", "n_a", "n_a_analytic", "residual", "std_err"]);
    let mut summaries = Vec::new();
    for (k, axis) in axes.iter().enumerate() {
        let axis_seed = seed.derive(k as u64);
        let records = (0..bank.len())
            .into_par_iter()
            .map(|i| simulate_measurement(&ctx.profile, &bank[i], axis, ctx.shots, axis_seed.derive(i as u64)))
            .collect::<qtoken::Result<Vec<_>>>()?;
        let mut res_sq = 0.0;
        let mut se_sq = 0.0;
        let mut within_var = 0.0;
        for (iz, row) in records.chunks(nphi).enumerate() {
            let mean = row.iter().map(|r| r.n_zero_fraction).sum::<f64>() / row.len() as f64;
            if row.len() > 1 {
                within_var += row.iter().map(|r| (r.n_zero_fraction - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64;
            }
            for (ip, rec) in row.iter().enumerate() {
                let analytic = attacker_fraction(c, &bank[iz * nphi + ip], axis);
                let residual = rec.n_zero_fraction - analytic;
                res_sq += residual * residual;
                se_sq += rec.sigma_est * rec.sigma_est;
                table.push(vec![
                    z_b[iz].into(),
                    phi_b[ip].into(),
                    axis.z().into(),
                    axis.phi().into(),
                    rec.n_zero_fraction.into(),
                    analytic.into(),
                    residual.into(),
                    rec.sigma_est.into(),
                ]);
            }
        }
        let n = records.len() as f64;
        let std_err_rms = (se_sq / n).sqrt();
        summaries.push(AxisScanSummary {
            z_a: axis.z(),
            phi_a: axis.phi(),
            residual_rms: (res_sq / n).sqrt(),
            std_err_rms,
            phi_spread_ratio: (within_var / nz as f64).sqrt() / std_err_rms,
        });
    }
    let doc = AttackScanSummary {
        schema_version: SCHEMA_VERSION,
        profile: ctx.profile.name.clone(),
        bank_grid: (nz, nphi),
        axes: summaries,
    };

    let mut out = ctx.out()?;
    out.write_table("attack_scan", &table)?;
    out.write_json("attack_scan_summary.json", &doc)?;
    if ctx.common.svg {
        // n_a versus z_b at phi_b = 0 for each axis.
        let series: Vec<Series> = doc
            .axes
            .iter()
            .enumerate()
            .map(|(k, s)| Series {
                label: if k == 0 { "first axis" } else { "" },
                points: (0..nz)
                    .map(|iz| (z_b[iz], attacker_fraction(c, &bank[iz * nphi], &axes[k])))
                    .chain(std::iter::once((f64::NAN, s.z_a)))
                    .collect(),
            })
            .collect();
        out.write_bytes("attack_scan.svg", line_plot("Attacker reading at phi_b = 0", "z_b", "n_a", &series).as_bytes())?;
    }
    let summary = doc
        .axes
        .iter()
        .map(|s| {
            format!(
                "axis z_a = {:.3}, phi_a = {:.3}: residual RMS {:.5} vs standard error {:.5}, phi spread ratio {:.2}",
                s.z_a, s.phi_a, s.residual_rms, s.std_err_rms, s.phi_spread_ratio
            )
        })
        .collect();
    Ok(finish(out, summary, Vec::new()))
}

// ---------------------------------------------------------------- forge-bench

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanWithError {
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl MeanWithError {
    pub fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let count = v.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let var = if count > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64 } else { 0.0 };
        Self {
            count,
            mean,
            std_err: (var / count as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeFitDocument {
    pub schema_version: u32,
    pub profile: String,
    pub mode: String,
    pub axes: Vec<BlochAngles>,
    pub tokens_per_axis: usize,
    pub n_f: MeanWithError,
    pub fallback_fraction: f64,
    pub gaussian: Option<GaussianFit>,
    pub skew_normal: Option<SkewNormalFit>,
    /// `likelihood`, or `moments` when the likelihood search failed.
    pub skew_normal_source: Option<String>,
    pub skew_normal_skewness: Option<f64>,
    pub skew_normal_tail_mass_outside_unit: Option<f64>,
    /// Bank tokens with `|cos theta_b| > 0.9`.
    pub polar: MeanWithError,
    /// Bank tokens with `|cos theta_b| < 0.1`.
    pub equatorial: MeanWithError,
}

/// Forger fit that degrades to the moment estimate, with a warning, when the
/// likelihood search fails.
pub fn forger_fit(n_f: &[f64], warnings: &mut Vec<String>) -> Result<(SkewNormalFit, &'static str), CliError> {
    match fit_skew_normal(n_f) {
        Ok(f) => Ok((f, "likelihood")),
        Err(qtoken::Error::FitFailed {
            reason,
            moment_estimate: Some(m),
        }) => {
            warnings.push(format!("skew-normal fit: {reason}; using the moment estimate"));
            Ok((m, "moments"))
        }
        Err(e) => Err(e.into()),
    }
}

fn forge_mode(a: &ForgeBenchArgs) -> (&'static str, CampaignOptions) {
    let options = CampaignOptions {
        noiseless_attack: a.noiseless_attack,
        force_fallback: a.fallback_only,
    };
    let mode = if a.fallback_only {
        "fallback_only"
    } else if a.noiseless_attack {
        "noiseless_attack"
    } else {
        "sampled"
    };
    (mode, options)
}

fn simulate_forgery(ctx: &Context, axes: &AttackAxes, count: usize, options: CampaignOptions) -> Result<(Vec<BlochAngles>, Vec<CampaignRow>), CliError> {
    let axes = parse_axes(&axes.z_a, &axes.phi_a)?;
    let bank = sample_bank_angles(SamplingStrategy::UniformSphere { count }, ctx.stream(STREAM_FORGE_ANGLES))?;
    let seed = ctx.stream(STREAM_FORGE);
    let mut rows = Vec::with_capacity(bank.len() * axes.len());
    for (k, axis) in axes.iter().enumerate() {
        rows.extend(run_attack_campaign(&ctx.profile, &bank, axis, ctx.shots, seed.derive(k as u64), options)?);
    }
    Ok((axes, rows))
}

fn cmd_forge_bench(ctx: &Context, a: &ForgeBenchArgs) -> Result<Outcome, CliError> {
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be at least 1"));
    }
    let (mode, options) = forge_mode(a);
    let (axes, rows) = simulate_forgery(ctx, &a.axes, a.count, options)?;
    let n_f: Vec<f64> = rows.iter().map(|r| r.n_f).collect();
    let mut warnings = Vec::new();

    let gaussian = match fit_gaussian(&n_f) {
        Ok(g) => Some(g),
        Err(e) => {
            warnings.push(format!("Gaussian fit: {}", CliError::from(e)));
            None
        }
    };
    let (skew, source) = match forger_fit(&n_f, &mut warnings) {
        Ok((f, s)) => (Some(f), Some(s.to_string())),
        Err(e) => {
            // Too few or identical samples: report the moments if they exist.
            warnings.push(format!("skew-normal fit: {e}"));
            (skew_normal_from_moments(&sample_moments(&n_f)).ok(), None)
        }
    };
    let doc = ForgeFitDocument {
        schema_version: SCHEMA_VERSION,
        profile: ctx.profile.name.clone(),
        mode: mode.to_string(),
        axes: axes.clone(),
        tokens_per_axis: a.count,
        n_f: MeanWithError::of(n_f.iter().copied()),
        fallback_fraction: rows.iter().filter(|r| r.outcome.branch.is_fallback()).count() as f64 / rows.len() as f64,
        gaussian,
        skew_normal: skew,
        skew_normal_source: if skew.is_some() { source.or(Some("moments".into())) } else { None },
        skew_normal_skewness: skew.map(|s| s.skewness()),
        skew_normal_tail_mass_outside_unit: skew.map(|s| s.tail_mass_outside_unit()),
        polar: MeanWithError::of(rows.iter().filter(|r| r.bank.z().abs() > 0.9).map(|r| r.n_f)),
        equatorial: MeanWithError::of(rows.iter().filter(|r| r.bank.z().abs() < 0.1).map(|r| r.n_f)),
    };

    let mut out = ctx.out()?;
    out.write_table("forge_campaign", &campaign_table(&rows))?;
    out.write_json("forge_fit.json", &doc)?;
    let theta_bins = theta_bin_table(&rows, a.bins);
    out.write_table("forge_theta_bins", &theta_bins)?;
    if ctx.common.svg {
        let points = theta_bins
            .rows
            .iter()
            .filter_map(|r| match (&r[0], &r[1], &r[3]) {
                (Cell::F(lo), Cell::F(hi), Cell::F(m)) => Some((0.5 * (lo + hi), *m)),
                _ => None,
            })
            .collect();
        let svg = line_plot(
            &format!("Forged acceptance ({})", ctx.profile.name),
            "theta_b",
            "mean n_f",
            &[Series { label: "n_f", points }],
        );
        out.write_bytes("forge_theta.svg", svg.as_bytes())?;
    }
    let summary = vec![
        format!(
            "{}: mean n_f = {:.4} +- {:.4} over {} forgeries ({mode}), fallback fraction {:.3}",
            ctx.profile.name, doc.n_f.mean, doc.n_f.std_err, doc.n_f.count, doc.fallback_fraction
        ),
        format!(
            "polar tokens {:.4} +- {:.4}, equatorial tokens {:.4} +- {:.4}",
            doc.polar.mean, doc.polar.std_err, doc.equatorial.mean, doc.equatorial.std_err
        ),
    ];
    Ok(finish(out, summary, warnings))
}

fn campaign_table(rows: &[CampaignRow]) -> Table {
    let mut t = Table::new(&CAMPAIGN_HEADER);
    for r in rows {
        t.push(vec![
            r.bank.theta().into(),
            r.bank.phi().into(),
            r.attack_axis.theta().into(),
            r.attack_axis.phi().into(),
            r.outcome.n_a_measured.into(),
            r.outcome.branch.as_str().into(),
            r.outcome.forged.theta().into(),
            r.outcome.forged.phi().into(),
            r.n_f.into(),
        ]);
    }
    t
}

fn theta_bin_table(rows: &[CampaignRow], bins: usize) -> Table {
    let mut t = Table::new(&["theta_lo", "theta_hi", "count", "mean_n_f", "std_err"]);
    for b in 0..bins {
        let lo = PI * b as f64 / bins as f64;
        let hi = PI * (b + 1) as f64 / bins as f64;
        let in_bin = |theta: f64| {
            let idx = ((theta / PI * bins as f64) as usize).min(bins - 1);
            idx == b
        };
        let m = MeanWithError::of(rows.iter().filter(|r| in_bin(r.bank.theta())).map(|r| r.n_f));
        t.push(vec![lo.into(), hi.into(), m.count.into(), m.mean.into(), m.std_err.into()]);
    }
    t
}

// ---------------------------------------------------------------- security

/// Reads one numeric column from a CSV table written by this tool.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    let data_err = |line: u64, message: String| CliError {
        kind: ErrorKind::Data,
        message: format!("{}:{line}: {message}", path.display()),
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::runtime(format!("{}: {e}", path.display())),
        _ => data_err(1, e.to_string()),
    })?;
    let headers = rdr.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| data_err(1, format!("no `{column}` column")))?;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: f64 = rec
            .get(idx)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| data_err(line, format!("`{}` is not a number", rec.get(idx).unwrap_or(""))))?;
        if !v.is_finite() {
            return Err(data_err(line, format!("non-finite `{column}`")));
        }
        values.push(v);
    }
    Ok(values)
}

fn cmd_security(ctx: &Context, a: &SecurityArgs) -> Result<Outcome, CliError> {
    if a.m_list.is_empty() || a.m_list.contains(&0) {
        return Err(CliError::usage("--m values must be at least 1"));
    }
    if a.curve_points < 2 {
        return Err(CliError::usage("--curve-points must be at least 2"));
    }
    if !(a.target > 0.0 && a.target < 1.0) {
        return Err(qtoken::Error::UnachievableTarget {
            target: a.target,
            tokens: *a.m_list.iter().max().unwrap_or(&1),
        }
        .into());
    }
    let n_b = match &a.bank_samples {
        Some(p) => read_column(p, "n_b")?,
        None => simulate_bank(ctx, SamplingStrategy::UniformSphere { count: a.count })?
            .1
            .iter()
            .map(|r| r.n_zero_fraction)
            .collect(),
    };
    let n_f = match &a.forge_samples {
        Some(p) => read_column(p, "n_f")?,
        None => simulate_forgery(ctx, &a.axes, a.count, CampaignOptions::default())?
            .1
            .iter()
            .map(|r| r.n_f)
            .collect(),
    };
    let mut warnings = Vec::new();
    let bank_fit = fit_gaussian(&n_b)?;
    let (forger, _) = forger_fit(&n_f, &mut warnings)?;
    let report = SecurityReport::build(ctx.profile.name.clone(), bank_fit, forger, a.target, &a.m_list)?;

    let mut out = ctx.out()?;
    out.write_json("security_report.json", &report)?;
    let curve = acceptance_curves(&bank_fit, &forger, 0.0, 1.0, a.curve_points);
    let mut table = Table::new(&["n_threshold", "p_b", "p_f", "p_b_empirical", "p_f_empirical"]);
    let empirical = |v: &[f64], t: f64| v.iter().filter(|&&x| x > t).count() as f64 / v.len() as f64;
    for p in &curve {
        table.push(vec![
            p.n_threshold.into(),
            p.p_b.into(),
            p.p_f.into(),
            empirical(&n_b, p.n_threshold).into(),
            empirical(&n_f, p.n_threshold).into(),
        ]);
    }
    out.write_table("acceptance_curves", &table)?;
    let mut per_m = Table::new(&["m", "n_threshold", "p_b_m", "p_f_m", "log10_p_b_m", "log10_p_f_m"]);
    for r in &report.per_m {
        per_m.push(vec![
            r.m.into(),
            r.n_threshold.into(),
            r.p_b_m.into(),
            r.p_f_m.into(),
            r.log10_p_b_m.into(),
            r.log10_p_f_m.into(),
        ]);
    }
    out.write_table("security_per_m", &per_m)?;
    if ctx.common.svg {
        let svg = line_plot(
            &format!("Acceptance versus threshold ({})", ctx.profile.name),
            "n_T",
            "acceptance probability",
            &[
                Series {
                    label: "p_b",
                    points: curve.iter().map(|p| (p.n_threshold, p.p_b)).collect(),
                },
                Series {
                    label: "p_f",
                    points: curve.iter().map(|p| (p.n_threshold, p.p_f)).collect(),
                },
            ],
        );
        out.write_bytes("acceptance_curves.svg", svg.as_bytes())?;
    }
    let mut summary = vec![format!(
        "{}: n_T = {:.5}, p_b = {:.5}, p_f = {:.5} (single token, target {})",
        report.profile, report.n_threshold, report.p_b, report.p_f, report.target_p_b
    )];
    for r in &report.per_m {
        summary.push(format!(
            "M = {:>3}: n_T = {:.5}, p_b^M = {:.6}, log10 p_f^M = {:.3}",
            r.m, r.n_threshold, r.p_b_m, r.log10_p_f_m
        ));
    }
    Ok(finish(out, summary, warnings))
}

// ---------------------------------------------------------------- fit

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFitDocument {
    pub schema_version: u32,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalFitDocument {
    pub schema_version: u32,
    pub samples: usize,
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub skewness: f64,
    pub tail_mass_outside_unit: f64,
}

fn cmd_fit(ctx: &Context, a: &FitArgs) -> Result<Outcome, CliError> {
    let records = ingest_replay(&a.input, &ctx.profile.observable).map_err(|e| match e {
        qtoken::Error::Io(io) => CliError::io(&a.input, io),
        other => {
            let mut err = CliError::from(other);
            err.message = format!("{}: {}", a.input.display(), err.message);
            err
        }
    })?;
    let values: Vec<f64> = records.iter().map(|r| r.n_zero_fraction).collect();
    let mut out = ctx.out()?;
    let summary = match a.kind {
        FitKind::Rabi => {
            let (_, doc) = rabi_fit(&ctx.profile, &records)?;
            out.write_json("rabi_fit.json", &doc)?;
            format!("c = {:.4}, sigma_exp/(n0+n1) = {:.4}", doc.c, doc.sigma_exp_norm)
        }
        FitKind::Gaussian => {
            let g = fit_gaussian(&values)?;
            out.write_json(
                "gaussian_fit.json",
                &GaussianFitDocument {
                    schema_version: SCHEMA_VERSION,
                    samples: values.len(),
                    mean: g.mean,
                    std: g.std,
                },
            )?;
            format!("mean = {:.5}, std = {:.5}", g.mean, g.std)
        }
        FitKind::SkewNormal => {
            let f = fit_skew_normal(&values)?;
            out.write_json(
                "skew_normal_fit.json",
                &SkewNormalFitDocument {
                    schema_version: SCHEMA_VERSION,
                    samples: values.len(),
                    location: f.location,
                    scale: f.scale,
                    shape: f.shape,
                    skewness: f.skewness(),
                    tail_mass_outside_unit: f.tail_mass_outside_unit(),
                },
            )?;
            format!("location = {:.5}, scale = {:.5}, shape = {:.4}", f.location, f.scale, f.shape)
        }
    };
    Ok(finish(out, vec![summary], Vec::new()))
}

// ---------------------------------------------------------------- coin

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenVerdict {
    pub token_id: String,
    pub n_b: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinVerdictDocument {
    pub schema_version: u32,
    pub coin_id: String,
    pub policy: AuthPolicy,
    pub accepted: bool,
    pub tokens: Vec<TokenVerdict>,
}

fn cmd_coin(ctx: &Context, a: &CoinArgs) -> Result<Outcome, CliError> {
    if a.m == 0 {
        return Err(CliError::usage("--m must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::usage("--threshold must lie in [0, 1]"));
    }
    let policy = AuthPolicy {
        n_threshold: a.threshold,
        coin_rule: match a.k {
            Some(k) => CoinRule::KOfM { k },
            None => CoinRule::AllPass,
        },
    };
    let seed = ctx.stream(STREAM_COIN);
    let coin = Coin::issue(a.coin_id.clone(), a.m, &ctx.profile, seed.derive(0))?;
    let verdict = authenticate_coin(&ctx.profile, &coin, &policy, ctx.shots, seed.derive(1))?;

    let mut out = ctx.out()?;
    out.write_json("coin.json", &coin.to_document(&policy, a.reveal_secrets))?;
    let doc = CoinVerdictDocument {
        schema_version: SCHEMA_VERSION,
        coin_id: coin.coin_id().to_string(),
        policy,
        accepted: verdict.accepted,
        tokens: coin
            .tokens()
            .iter()
            .zip(&verdict.per_token)
            .map(|(t, &n)| TokenVerdict {
                token_id: t.token_id.clone(),
                n_b: n,
                passed: policy.token_passes(n),
            })
            .collect(),
    };
    out.write_json("coin_verdict.json", &doc)?;
    let passed = doc.tokens.iter().filter(|t| t.passed).count();
    let summary = vec![format!(
        "coin {}: {passed}/{} tokens above n_T = {}, {}",
        doc.coin_id,
        a.m,
        a.threshold,
        if doc.accepted { "accepted" } else { "rejected" }
    )];
    Ok(finish(out, summary, Vec::new()))
}
