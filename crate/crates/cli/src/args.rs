use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use zipscan::inference::PValueMethod;
use zipscan::StatisticKind;

#[derive(Debug, Parser)]
#[command(name = "zipscan", version, about = "Zero-inflated Poisson space-time scan statistic")]
pub struct Cli {
    /// Worker threads (default: all cores). Never changes any output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan observed counts for the most likely cluster and test it.
    Scan(ScanArgs),
    /// Simulate null replicates and save their scan statistics as history.
    Calibrate(CalibrateArgs),
    /// Run a simulation experiment described by a TOML or JSON file.
    Simulate(SimulateArgs),
    /// List the candidate zones built from a geometry file.
    Zones(ZonesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZoneMethod {
    Knn,
    Flex,
}

#[derive(Debug, Clone, Args)]
pub struct ZoneArgs {
    /// Zone shape.
    #[arg(long = "zones", value_enum, default_value_t = ZoneMethod::Knn)]
    pub method: ZoneMethod,
    /// Largest neighbour count for k-NN zones (default: half the locations).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Largest flexible zone (default: min(10, half the locations)).
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Neighbours per location in the adjacency used by flexible zones.
    #[arg(long, default_value_t = 4)]
    pub adjacency_k: usize,
}

fn parse_statistic(s: &str) -> Result<StatisticKind, String> {
    s.parse().map_err(|e: zipscan::Error| e.to_string())
}

fn parse_pvalue(s: &str) -> Result<PValueMethod, String> {
    s.parse().map_err(|e: zipscan::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct StatisticArgs {
    /// eb-zip or eb-poisson.
    #[arg(long, value_parser = parse_statistic, default_value = "eb-zip")]
    pub statistic: StatisticKind,
    /// Longest window, in periods back from the present (default: all).
    #[arg(long)]
    pub max_duration: Option<usize>,
    /// Relative EM tolerance.
    #[arg(long, default_value_t = zipscan::zip::DEFAULT_TOL)]
    pub em_tol: f64,
    /// EM iteration cap per window.
    #[arg(long, default_value_t = zipscan::zip::DEFAULT_MAX_ITER)]
    pub em_max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// Counts file: location_id,time,count (time 1 = most recent).
    #[arg(long)]
    pub counts: PathBuf,
    /// Baselines file: location_id,time,p,mu.
    #[arg(long)]
    pub baselines: PathBuf,
    /// Geometry file: location_id,x,y or a distance matrix.
    #[arg(long)]
    pub geometry: PathBuf,
    #[command(flatten)]
    pub statistic: StatisticArgs,
    #[command(flatten)]
    pub zones: ZoneArgs,
    /// monte-carlo, gumbel or empirical.
    #[arg(long, value_parser = parse_pvalue, default_value = "monte-carlo")]
    pub pvalue: PValueMethod,
    /// Null replicates for monte-carlo and gumbel P-values.
    #[arg(long, default_value_t = 999)]
    pub replicates: usize,
    /// Replicate history (from `calibrate`) for empirical P-values.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Keep every n-th history value, to thin out overlapping windows.
    #[arg(long, default_value_t = 1)]
    pub history_stride: usize,
    /// Significance level; exit code 2 when P < alpha.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Ranked windows to report, the most likely cluster included.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Master seed; required for monte-carlo and gumbel P-values.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Baselines file: location_id,time,p,mu.
    #[arg(long)]
    pub baselines: PathBuf,
    /// Geometry file: location_id,x,y or a distance matrix.
    #[arg(long)]
    pub geometry: PathBuf,
    #[command(flatten)]
    pub statistic: StatisticArgs,
    #[command(flatten)]
    pub zones: ZoneArgs,
    /// Number of null replicates.
    #[arg(long, default_value_t = 999)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    /// History path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Experiment file (.json, otherwise TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the file's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// 999 null replicates and 1000 outbreaks per scenario.
    #[arg(long)]
    pub full_size: bool,
    /// Directory for detection.csv, false_positive.csv and datasets.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ZonesArgs {
    /// Geometry file: location_id,x,y or a distance matrix.
    #[arg(long)]
    pub geometry: PathBuf,
    #[command(flatten)]
    pub zones: ZoneArgs,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
