use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zipscan::inference::{self, PValueMethod, PValueReport, ReplicateSet};
use zipscan::io::{self as zio, LocationIndex};
use zipscan::sim::{self, ExperimentConfig};
use zipscan::zones::{adjacency_from_knn, flex_zones, knn_zones, max_k_for_half};
use zipscan::{scan, BaselineGrid, DistanceMatrix, EmOptions, ScanOptions, StatisticKind, WindowScore, ZoneSet};

use crate::args::{CalibrateArgs, ScanArgs, SimulateArgs, StatisticArgs, ZoneArgs, ZoneMethod, ZonesArgs};

/// Zone settings after defaults are filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ZoneConfig {
    pub method: ZoneMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency_k: Option<usize>,
}

pub fn build_zones(dist: &DistanceMatrix, args: &ZoneArgs) -> Result<(ZoneSet, ZoneConfig)> {
    let n = dist.len();
    match args.method {
        ZoneMethod::Knn => {
            let k_max = args.kmax.unwrap_or_else(|| max_k_for_half(n));
            let zones = knn_zones(dist, k_max).context("building k-NN zones")?;
            Ok((
                zones,
                ZoneConfig {
                    method: ZoneMethod::Knn,
                    k_max: Some(k_max),
                    max_size: None,
                    adjacency_k: None,
                },
            ))
        }
        ZoneMethod::Flex => {
            let max_size = args.max_size.unwrap_or_else(|| (n / 2).clamp(1, 10));
            if n == 1 {
                let zones = knn_zones(dist, 0)?;
                return Ok((
                    zones,
                    ZoneConfig {
                        method: ZoneMethod::Flex,
                        k_max: None,
                        max_size: Some(max_size),
                        adjacency_k: Some(0),
                    },
                ));
            }
            let k = args.adjacency_k;
            if k == 0 {
                bail!("--adjacency-k must be at least 1");
            }
            let adj = adjacency_from_knn(dist, k).context("building adjacency")?;
            let zones = flex_zones(dist, &adj, max_size).context("building flexible zones")?;
            Ok((
                zones,
                ZoneConfig {
                    method: ZoneMethod::Flex,
                    k_max: None,
                    max_size: Some(max_size),
                    adjacency_k: Some(k),
                },
            ))
        }
    }
}

fn scan_options(args: &StatisticArgs, periods: usize) -> Result<ScanOptions> {
    let max_duration = args.max_duration.unwrap_or(periods);
    if max_duration == 0 || max_duration > periods {
        bail!("--max-duration {max_duration} must be in 1..={periods}");
    }
    if args.em_tol.is_nan() || args.em_tol <= 0.0 || args.em_max_iter == 0 {
        bail!("EM tolerance and iteration cap must be positive");
    }
    let mut options = ScanOptions::new(args.statistic, max_duration);
    options.em = EmOptions {
        tol: args.em_tol,
        max_iter: args.em_max_iter,
    };
    Ok(options)
}

fn write_output(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, contents).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub counts: String,
    pub baselines: String,
    pub geometry: String,
    pub statistic: StatisticKind,
    pub zones: ZoneConfig,
    pub max_duration: usize,
    pub em: EmOptions,
    pub pvalue: PValueMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_stride: Option<usize>,
    pub alpha: f64,
    pub top_k: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct ClusterReport {
    pub rank: usize,
    pub zone_index: usize,
    pub members: Vec<String>,
    pub duration: usize,
    pub q_hat: f64,
    pub lambda: f64,
    pub p_value: f64,
    pub em_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct ScanReport {
    pub statistic: StatisticKind,
    pub lambda_star: f64,
    pub p_value: PValueReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value_note: Option<String>,
    pub alpha: f64,
    pub null_rejected: bool,
    pub most_likely_cluster: ClusterReport,
    /// All reported windows, best first; rank 1 is the most likely cluster.
    pub clusters: Vec<ClusterReport>,
    pub zones: usize,
    pub windows: usize,
    pub em_non_converged: usize,
    pub seed: Option<u64>,
    /// External location id of each internal index.
    pub locations: Vec<String>,
    pub config: RunConfig,
}

/// History as written by `calibrate`; bare JSON arrays and whitespace
/// separated numbers are accepted too.
#[derive(Debug, Deserialize)]
struct HistoryIn {
    values: Vec<f64>,
}

pub fn read_history(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading history {}", path.display()))?;
    let trimmed = text.trim_start();
    let values = if trimmed.starts_with('{') {
        serde_json::from_str::<HistoryIn>(&text)
            .with_context(|| format!("parsing history {}", path.display()))?
            .values
    } else if trimmed.starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("parsing history {}", path.display()))?
    } else {
        text.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .with_context(|| format!("history {}: cannot parse '{tok}'", path.display()))
            })
            .collect::<Result<Vec<f64>>>()?
    };
    Ok(values)
}

struct Reference {
    set: ReplicateSet,
    method: PValueMethod,
    note: Option<String>,
}

impl Reference {
    fn pvalue(&self, observed: f64) -> Result<PValueReport> {
        Ok(inference::pvalue(observed, &self.set, self.method)?)
    }
}

fn member_ids(locations: &LocationIndex, zones: &ZoneSet, score: &WindowScore) -> Vec<String> {
    zones
        .get(score.window.zone)
        .members()
        .iter()
        .map(|&i| locations.id(i).to_string())
        .collect()
}

/// Runs a scan and writes its report. Returns whether the null was
/// rejected at the configured alpha.
pub fn cmd_scan(args: &ScanArgs) -> Result<bool> {
    let started = Instant::now();
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("--alpha {} must lie in (0, 1)", args.alpha);
    }
    if args.top_k == 0 {
        bail!("--top-k must be at least 1");
    }
    let counts = zio::ingest_counts(&args.counts)?;
    let locations = counts.locations;
    let counts = counts.grid;
    let baselines = zio::ingest_baselines(&args.baselines, Some(&locations), Some(counts.periods()))?.grid;
    let dist = zio::ingest_geometry(&args.geometry, &locations)?;
    let (zones, zone_config) = build_zones(&dist, &args.zones)?;
    let options = scan_options(&args.statistic, counts.periods())?.with_top_k(args.top_k);
    let score = sim::scoring_baselines(&baselines, options.statistic)?;

    let result = scan(&counts, &score, &zones, &options).context("scanning observed counts")?;

    let (reference, replicates, history, stride, seed) = match args.pvalue {
        PValueMethod::Empirical => {
            let Some(path) = &args.history else {
                bail!("--pvalue empirical needs --history");
            };
            if args.history_stride == 0 {
                bail!("--history-stride must be at least 1");
            }
            let values: Vec<f64> = read_history(path)?.into_iter().step_by(args.history_stride).collect();
            let set = ReplicateSet::new(values, None).with_context(|| format!("history {}", path.display()))?;
            (
                Reference {
                    set,
                    method: PValueMethod::Empirical,
                    note: None,
                },
                None,
                Some(display(path)),
                Some(args.history_stride),
                args.seed,
            )
        }
        method => {
            let Some(seed) = args.seed else {
                bail!("--pvalue {method} simulates null replicates and needs --seed");
            };
            if args.replicates == 0 {
                bail!("--replicates must be at least 1");
            }
            let set = inference::run_replication_with(&baselines, &score, &zones, &options, args.replicates, seed)
                .context("simulating null replicates")?;
            let mut reference = Reference {
                set,
                method,
                note: None,
            };
            if method == PValueMethod::Gumbel {
                if let Err(e) = inference::gumbel_fit(&reference.set) {
                    reference.method = PValueMethod::MonteCarlo;
                    reference.note = Some(format!("gumbel fit failed ({e}); fell back to monte-carlo"));
                }
            }
            (reference, Some(args.replicates), None, None, Some(seed))
        }
    };

    let p_value = reference.pvalue(result.lambda_star)?;
    let clusters = result
        .ranked
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            Ok(ClusterReport {
                rank: rank + 1,
                zone_index: s.window.zone,
                members: member_ids(&locations, &zones, s),
                duration: s.window.duration,
                q_hat: s.q_hat,
                lambda: s.lambda,
                p_value: reference.pvalue(s.lambda)?.p_value,
                em_iterations: s.em_iterations,
                converged: s.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let null_rejected = p_value.p_value < args.alpha;
    let mlc = &result.mlc;
    let report = ScanReport {
        statistic: result.statistic,
        lambda_star: result.lambda_star,
        p_value_note: reference.note.clone(),
        p_value,
        alpha: args.alpha,
        null_rejected,
        most_likely_cluster: ClusterReport {
            rank: 1,
            zone_index: mlc.window.zone,
            members: member_ids(&locations, &zones, mlc),
            duration: mlc.window.duration,
            q_hat: mlc.q_hat,
            lambda: mlc.lambda,
            p_value: clusters[0].p_value,
            em_iterations: mlc.em_iterations,
            converged: mlc.converged,
        },
        clusters,
        zones: zones.len(),
        windows: result.windows_evaluated,
        em_non_converged: result.non_converged,
        seed,
        locations: locations.ids().to_vec(),
        config: RunConfig {
            counts: display(&args.counts),
            baselines: display(&args.baselines),
            geometry: display(&args.geometry),
            statistic: options.statistic,
            zones: zone_config,
            max_duration: options.max_duration,
            em: options.em,
            pvalue: args.pvalue,
            replicates,
            history,
            history_stride: stride,
            alpha: args.alpha,
            top_k: args.top_k,
            seed,
        },
    };
    write_output(args.out.as_deref(), &to_json(&report)?)?;
    if let Some(note) = &reference.note {
        eprintln!("warning: {note}");
    }
    eprintln!(
        "scan: {} zones, {} windows, lambda* = {:.6}, P = {:.6} ({}), {:.2?}",
        report.zones,
        report.windows,
        report.lambda_star,
        report.p_value.p_value,
        report.p_value.method,
        started.elapsed()
    );
    Ok(null_rejected)
}

#[derive(Debug, Serialize)]
struct HistoryOut {
    values: Vec<f64>,
    master_seed: Option<u64>,
    statistic: StatisticKind,
    baselines: String,
    geometry: String,
    zones: ZoneConfig,
    max_duration: usize,
    em: EmOptions,
    locations: Vec<String>,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let started = Instant::now();
    let baselines = zio::ingest_baselines(&args.baselines, None, None)?;
    let locations = baselines.locations;
    let baselines: BaselineGrid = baselines.grid;
    let dist = zio::ingest_geometry(&args.geometry, &locations)?;
    let (zones, zone_config) = build_zones(&dist, &args.zones)?;
    let options = scan_options(&args.statistic, baselines.periods())?;
    if args.replicates == 0 {
        bail!("--replicates must be at least 1");
    }
    let score = sim::scoring_baselines(&baselines, options.statistic)?;
    let set = inference::run_replication_with(&baselines, &score, &zones, &options, args.replicates, args.seed)
        .context("simulating null replicates")?;
    let out = HistoryOut {
        values: set.values,
        master_seed: set.master_seed,
        statistic: options.statistic,
        baselines: display(&args.baselines),
        geometry: display(&args.geometry),
        zones: zone_config,
        max_duration: options.max_duration,
        em: options.em,
        locations: locations.ids().to_vec(),
    };
    write_output(args.out.as_deref(), &to_json(&out)?)?;
    eprintln!(
        "calibrate: {} replicates over {} zones, {:.2?}",
        args.replicates,
        zones.len(),
        started.elapsed()
    );
    Ok(())
}

pub fn read_experiment(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut config = read_experiment(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if args.full_size {
        config = config.full_size();
    }
    let result = sim::run_experiment(&config).context("running experiment")?;
    let out: PathBuf = args.out.clone();
    result
        .write_tables(&out)
        .with_context(|| format!("writing tables to {}", out.display()))?;
    fs::write(out.join("experiment.json"), to_json(&config)?)?;

    let alpha = if config.alphas.contains(&0.05) {
        0.05
    } else {
        config.alphas[0]
    };
    let mut summary = String::new();
    for run in &result.runs {
        let name = if run.scenario.name.is_empty() {
            format!("scenario {}", run.scenario_index)
        } else {
            run.scenario.name.clone()
        };
        let line = if run.scenario.is_null() {
            format!(
                "{name} [{}]: week-1 rejection rate at alpha {alpha}: {:.3}\n",
                run.method,
                run.first_week_rejection_rate(alpha)
            )
        } else {
            let f = sim::median(&run.f_at_detection(alpha, 3));
            format!(
                "{name} [{}]: detected by week 3 at alpha {alpha}: {:.3}, median F at detection: {}\n",
                run.method,
                run.detected_by(alpha, 3),
                f.map_or("n/a".to_string(), |f| format!("{f:.3}"))
            )
        };
        summary.push_str(&line);
    }
    write_output(None, &summary)?;
    eprintln!("simulate: {} runs, {:.2?}", result.runs.len(), started.elapsed());
    Ok(())
}

pub fn cmd_zones(args: &ZonesArgs) -> Result<()> {
    let locations = zio::geometry_locations(&args.geometry)?;
    let dist = zio::ingest_geometry(&args.geometry, &locations)?;
    let (zones, _) = build_zones(&dist, &args.zones)?;
    let mut out = String::from("zone,size,members\n");
    for (index, zone) in zones.iter().enumerate() {
        let ids: Vec<&str> = zone.members().iter().map(|&i| locations.id(i)).collect();
        out.push_str(&format!("{index},{},{}\n", zone.len(), ids.join(";")));
    }
    write_output(args.out.as_deref(), &out)?;
    eprintln!("zones: {} zones over {} locations", zones.len(), locations.len());
    Ok(())
}
