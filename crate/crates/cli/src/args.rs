//! Per-subcommand options. Every field is optional so that a config-file
//! section and the command-line flags can be overlaid before defaults apply.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PanelArgs {
    /// Loss events CSV (event_id, accident_date, sector, total_loss)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// First day of the analysis window (YYYY-MM-DD)
    #[arg(long)]
    pub start: Option<String>,
    /// Last day of the analysis window (YYYY-MM-DD)
    #[arg(long)]
    pub end: Option<String>,
    /// Comma-separated sector codes to keep
    #[arg(long, value_delimiter = ',')]
    pub sectors: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quarters: Option<usize>,
    #[arg(long)]
    pub lines: Option<usize>,
    /// Sector codes for the lines, in order
    #[arg(long, value_delimiter = ',')]
    pub sectors: Option<Vec<String>>,
    /// Poisson events per quarter
    #[arg(long)]
    pub rate: Option<f64>,
    /// pareto or lognormal
    #[arg(long)]
    pub severity: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub x_min: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Contamination tiers applied to the largest losses, e.g. 5x1000,5x100
    #[arg(long, value_delimiter = ',')]
    pub contaminate: Option<Vec<String>>,
    /// independence, gaussian, joe-pairs or survival-joe-pairs
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub start_year: Option<i32>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub date_format: Option<String>,
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long)]
    pub date_column: Option<String>,
    #[arg(long)]
    pub sector_column: Option<String>,
    #[arg(long)]
    pub loss_column: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SummaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TailfitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    /// Comma-separated methods, or all
    #[arg(long = "method", value_delimiter = ',')]
    #[serde(rename = "method")]
    pub methods: Option<Vec<String>>,
    /// Order statistics used by the Hill family (default n/10)
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k0: Option<usize>,
    /// Smoothing factor of the smoothed Hill estimator
    #[arg(long)]
    pub r: Option<usize>,
    /// Grid exponent of the characteristic-function regression
    #[arg(long)]
    pub delta: Option<f64>,
    /// Also run the percentile-pair variant
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub experimental: Option<bool>,
    #[arg(long)]
    pub p_lo: Option<f64>,
    #[arg(long)]
    pub p_hi: Option<f64>,
    /// Write Hill-plot and Pareto QQ plot data
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plots: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct UtilityArgs {
    /// log, linear or exponential
    #[arg(long)]
    pub utility: Option<String>,
    #[arg(long)]
    pub risk_aversion: Option<f64>,
    #[arg(long)]
    pub wealth: Option<f64>,
    /// Cover fraction c; the per-event cap is c times wealth
    #[arg(long)]
    pub cover: Option<f64>,
    /// per-event or aggregate
    #[arg(long)]
    pub cap_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrimSweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_delimiter = ',')]
    pub k0: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Recompute the single-line premium at every cell
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub premium: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pricing: UtilityArgs,
    #[arg(long)]
    pub scenarios: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ExtremogramArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    /// ratio or covariance
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// aggregate or count
    #[arg(long)]
    pub series: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RobustArgs {
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub huber: Option<f64>,
    /// huber or identity
    #[arg(long)]
    pub psi: Option<String>,
    #[arg(long)]
    pub standardize: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_zeros: Option<bool>,
    #[arg(long)]
    pub mcd_budget: Option<u64>,
    #[arg(long)]
    pub mcd_starts: Option<usize>,
    #[arg(long)]
    pub mcd_steps: Option<usize>,
    #[arg(long)]
    pub eigen_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CorrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    /// Comma-separated methods (pearson, ssd, quadrant, mcd) or all
    #[arg(long = "method", value_delimiter = ',')]
    #[serde(rename = "method")]
    pub methods: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub robust: RobustArgs,
    /// Repair indefinite matrices to the nearest correlation matrix
    #[arg(long)]
    pub repair: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CopulaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    /// Candidate pair families
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long)]
    pub theta_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// empirical (resample losses) or pareto (Hill-fitted tail)
    #[arg(long)]
    pub severity: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k0: Option<usize>,
    /// Marginal scenarios per line (J)
    #[arg(long)]
    pub marginal_scenarios: Option<usize>,
    /// Coupled scenarios (S)
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Quarters per coupled scenario (4 for annual)
    #[arg(long)]
    pub periods: Option<usize>,
    /// independence, gaussian or structure
    #[arg(long)]
    pub copula: Option<String>,
    #[arg(long)]
    pub corr_method: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub robust: RobustArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the coupled-scenario audit dump
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PriceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub pricing: UtilityArgs,
    /// Price the weighted portfolio of all lines
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub portfolio: Option<bool>,
    /// Price a single line (sector code)
    #[arg(long)]
    pub line: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Also price the line conditional on every other line exceeding this quantile level
    #[arg(long)]
    pub conditional: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DiversifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// VaR level
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
}
