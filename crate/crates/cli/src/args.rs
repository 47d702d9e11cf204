use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtoken::DEFAULT_MASTER_SEED;

#[derive(Debug, Parser)]
#[command(name = "qtoken", version, about = "Simulate ensemble quantum tokens, their forgery, and the resulting security margins")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Built-in profile (sherbrooke, kyiv, osaka, brisbane, kyoto) or a TOML profile file.
    #[arg(long, global = true, default_value = "brisbane")]
    pub profile: String,

    /// Master seed. Identical seeds and arguments give byte-identical outputs.
    #[arg(long, global = true, default_value_t = DEFAULT_MASTER_SEED)]
    pub seed: u64,

    /// Shots per measurement [default: the profile's shots_default].
    #[arg(long, global = true)]
    pub shots: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "QTOKEN_OUT", default_value = "qtoken-out")]
    pub out: PathBuf,

    /// Format of tabular outputs. Fit and report documents are always JSON.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Also write SVG plots of the main tables.
    #[arg(long, global = true)]
    pub svg: bool,

    /// Worker threads [default: all cores]. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the preparation angle and fit contrast and experimental noise.
    Rabi(RabiArgs),
    /// Self-acceptance distribution of bank-issued tokens.
    BankBench(BankBenchArgs),
    /// Attacker readings over a grid of bank tokens and attack axes.
    AttackScan(AttackScanArgs),
    /// Forgery campaign against uniformly drawn bank tokens.
    ForgeBench(ForgeBenchArgs),
    /// Fit both distributions and sweep the coin size.
    Security(SecurityArgs),
    /// Fit recorded replay data.
    Fit(FitArgs),
    /// Issue and authenticate one coin.
    Coin(CoinArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RabiArgs {
    /// Number of evenly spaced preparation angles on [0, pi].
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    /// Repeated records per angle.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Uniform,
    Grid,
    Equator,
}

#[derive(Debug, Clone, Args)]
pub struct BankBenchArgs {
    #[arg(long, value_enum, default_value_t = Strategy::Uniform)]
    pub strategy: Strategy,
    /// Token count for the uniform and equator strategies.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Grid dimensions THETAxPHI for the grid strategy.
    #[arg(long, default_value = "10x10", value_parser = parse_dims)]
    pub grid: (usize, usize),
    /// Bins per angle in the angle-dependence table.
    #[arg(long, default_value_t = 6)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AttackScanArgs {
    /// Attack axis heights z_a = cos(theta_a), comma separated.
    #[arg(long = "z-a", value_delimiter = ',', num_args = 1.., required = true, allow_negative_numbers = true)]
    pub z_a: Vec<f64>,
    /// Attack axis azimuths, comma separated.
    #[arg(long = "phi-a", value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub phi_a: Vec<f64>,
    /// Bank grid ZxPHI: z_b evenly on [-1, 1], phi_b evenly on [0, 2pi).
    #[arg(long, default_value = "21x24", value_parser = parse_dims)]
    pub bank_grid: (usize, usize),
}

#[derive(Debug, Clone, Args)]
pub struct AttackAxes {
    /// Attack axis heights z_a, comma separated.
    #[arg(long = "z-a", value_delimiter = ',', num_args = 1.., default_value = "1", allow_negative_numbers = true)]
    pub z_a: Vec<f64>,
    /// Attack axis azimuths, comma separated.
    #[arg(long = "phi-a", value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub phi_a: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ForgeBenchArgs {
    #[command(flatten)]
    pub axes: AttackAxes,
    /// Bank tokens attacked per axis.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Invert the exact expected reading instead of a sampled one.
    #[arg(long)]
    pub noiseless_attack: bool,
    /// Skip the measurement and guess uniformly on the sphere.
    #[arg(long)]
    pub fallback_only: bool,
    /// Bins in theta_b for the n_f table.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SecurityArgs {
    #[command(flatten)]
    pub axes: AttackAxes,
    /// Required coin-level bank acceptance p_b^M.
    #[arg(long, default_value_t = 0.999)]
    pub target: f64,
    /// Coin sizes M, comma separated.
    #[arg(long = "m", value_delimiter = ',', num_args = 1.., default_value = "1,4,9,16,25,36,49")]
    pub m_list: Vec<usize>,
    /// Tokens simulated for each distribution.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Reuse a bank_samples.csv from bank-bench instead of simulating.
    #[arg(long)]
    pub bank_samples: Option<PathBuf>,
    /// Reuse a forge_campaign.csv from forge-bench instead of simulating.
    #[arg(long)]
    pub forge_samples: Option<PathBuf>,
    /// Thresholds in the acceptance curve table.
    #[arg(long, default_value_t = 201)]
    pub curve_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Rabi,
    Gaussian,
    SkewNormal,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Replay CSV: theta_prep,phi_prep,theta_meas,phi_meas,shots,total_counts.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: FitKind,
}

#[derive(Debug, Clone, Args)]
pub struct CoinArgs {
    /// Tokens in the coin.
    #[arg(long = "m", default_value_t = 9)]
    pub m: usize,
    #[arg(long, default_value = "coin-0")]
    pub coin_id: String,
    /// Acceptance threshold n_T.
    #[arg(long)]
    pub threshold: f64,
    /// Accept when at least K tokens pass instead of requiring all.
    #[arg(long)]
    pub k: Option<usize>,
    /// Include the secret token angles in coin.json.
    #[arg(long)]
    pub reveal_secrets: bool,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad dimension `{a}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad dimension `{b}`"))?;
    if a == 0 || b == 0 {
        return Err("dimensions must be at least 1".into());
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(parse_dims("10x12"), Ok((10, 12)));
        assert!(parse_dims("10").is_err());
        assert!(parse_dims("0x3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_lists() {
        let cli = Cli::try_parse_from(["qtoken", "attack-scan", "--z-a", "1,0.5,-1", "--phi-a", "0,1.5707963267948966"]).unwrap();
        match cli.command {
            Command::AttackScan(a) => {
                assert_eq!(a.z_a, vec![1.0, 0.5, -1.0]);
                assert_eq!(a.phi_a.len(), 2);
            }
            _ => unreachable!(),
        }
        assert!(Cli::try_parse_from(["qtoken", "attack-scan"]).is_err());
    }
}
