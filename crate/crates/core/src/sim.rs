//! Desk-scale simulation study: hotspot outbreaks injected into ZIP
//! baselines, scanned week by week, scored for timeliness and spatial
//! accuracy.
//!
//! Every dataset draws from its own sub-stream, so tables are identical for
//! any thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::inference::{pvalue, run_replication_with, PValueMethod, ReplicateSet};
use crate::rng::{substream, tag};
use crate::scan::{scan, BaselineGrid, CountGrid, ScanOptions, StatisticKind};
use crate::zip::{zip_fit_em, zip_sample, HistoricalSeries, ZipParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::zones::{knn_zones, DistanceMatrix, Zone, ZoneSet};

fn default_locations() -> usize {
    100
}
fn default_baseline_weeks() -> usize {
    9
}
fn default_outbreak_weeks() -> usize {
    11
}
fn default_max_duration() -> usize {
    10
}
fn default_max_zone_size() -> usize {
    25
}

/// One simulation setting. `relative_risk = 1` is a non-outbreak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_locations")]
    pub locations: usize,
    pub p: f64,
    pub mu: f64,
    pub relative_risk: f64,
    /// Size of the randomly centred k-NN outbreak zone.
    #[serde(default)]
    pub outbreak_size: usize,
    /// Fixed outbreak zone; overrides `outbreak_size` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outbreak_zone: Option<Vec<usize>>,
    #[serde(default = "default_baseline_weeks")]
    pub baseline_weeks: usize,
    #[serde(default = "default_outbreak_weeks")]
    pub outbreak_weeks: usize,
    #[serde(default = "default_max_duration")]
    pub max_duration: usize,
    #[serde(default = "default_max_zone_size")]
    pub max_zone_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// The standard 100-location layout with the default timing.
    pub fn new(p: f64, mu: f64, relative_risk: f64, outbreak_size: usize) -> Self {
        Self {
            name: String::new(),
            locations: default_locations(),
            p,
            mu,
            relative_risk,
            outbreak_size,
            outbreak_zone: None,
            baseline_weeks: default_baseline_weeks(),
            outbreak_weeks: default_outbreak_weeks(),
            max_duration: default_max_duration(),
            max_zone_size: default_max_zone_size(),
            seed: 0,
        }
    }

    pub fn is_null(&self) -> bool {
        self.relative_risk == 1.0
    }

    pub fn total_weeks(&self) -> usize {
        self.baseline_weeks + self.outbreak_weeks
    }

    pub fn baseline_params(&self) -> Result<ZipParams> {
        ZipParams::new(self.p, self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline_params()?;
        if !(self.relative_risk >= 1.0 && self.relative_risk.is_finite()) {
            return Err(Error::Domain(format!(
                "relative risk {} must be finite and >= 1",
                self.relative_risk
            )));
        }
        if self.locations == 0 {
            return Err(Error::Domain("scenario needs at least one location".into()));
        }
        if let Some(zone) = &self.outbreak_zone {
            let zone = Zone::new(zone.clone())?;
            if zone.members().last().is_some_and(|&m| m >= self.locations) {
                return Err(Error::Domain("outbreak zone references an unknown location".into()));
            }
        } else if !self.is_null() && (self.outbreak_size == 0 || self.outbreak_size > self.locations) {
            return Err(Error::Domain(format!(
                "outbreak size {} must be in 1..={}",
                self.outbreak_size, self.locations
            )));
        }
        if self.outbreak_weeks == 0 || self.max_duration == 0 || self.max_zone_size == 0 {
            return Err(Error::Domain(
                "outbreak weeks, max duration and zone size must be positive".into(),
            ));
        }
        if self.baseline_weeks + 1 < self.max_duration {
            return Err(Error::Domain(format!(
                "{} baseline weeks cannot fill a {}-week scan window in outbreak week 1",
                self.baseline_weeks, self.max_duration
            )));
        }
        Ok(())
    }
}

/// Uniform random locations on the unit square.
pub fn place_locations(n: usize, master_seed: u64) -> Vec<(f64, f64)> {
    let mut rng = substream(master_seed, &[tag::GEOMETRY, n as u64]);
    (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
}

/// A random center and its `size - 1` nearest neighbours.
pub fn random_outbreak_zone<R: Rng + ?Sized>(dist: &DistanceMatrix, size: usize, rng: &mut R) -> Result<Zone> {
    let center = rng.random_range(0..dist.len());
    let order = dist.neighbors_by_distance(center);
    Zone::new(order[..size].to_vec())
}

/// Counts for the baseline and outbreak weeks of one dataset, newest week at
/// time 1. Inside the truth zone during outbreak weeks only the Poisson mean
/// is scaled; the structural-zero probability is unchanged.
pub fn generate_scenario_data<R: Rng + ?Sized>(
    scenario: &Scenario,
    truth: Option<&Zone>,
    rng: &mut R,
) -> Result<CountGrid> {
    scenario.validate()?;
    let base = scenario.baseline_params()?;
    let raised = base.with_scaled_mean(scenario.relative_risk)?;
    let (n, weeks) = (scenario.locations, scenario.total_weeks());
    let mut y = Vec::with_capacity(n * weeks);
    for i in 0..n {
        let affected = truth.is_some_and(|z| z.contains(i));
        for t in 1..=weeks {
            let params = if affected && t <= scenario.outbreak_weeks {
                raised
            } else {
                base
            };
            y.push(zip_sample(params, rng));
        }
    }
    CountGrid::new(n, weeks, y)
}

/// `(|detected ∩ truth| / |detected|, |detected ∩ truth| / |truth|)`.
pub fn spatial_precision_recall(detected: &Zone, truth: &Zone) -> (f64, f64) {
    let shared = detected.intersection_size(truth) as f64;
    (shared / detected.len() as f64, shared / truth.len() as f64)
}

/// Harmonic mean of precision and recall; 0 when either is 0.
pub fn harmonic_f(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 || recall <= 0.0 {
        0.0
    } else {
        2.0 / (1.0 / precision + 1.0 / recall)
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.1]
}
fn default_methods() -> Vec<StatisticKind> {
    vec![StatisticKind::EbZip, StatisticKind::EbPoisson]
}
fn default_replicates() -> usize {
    199
}
fn default_outbreaks() -> usize {
    200
}
fn default_pvalue() -> PValueMethod {
    PValueMethod::Gumbel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<StatisticKind>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_outbreaks")]
    pub outbreaks_per_scenario: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_pvalue")]
    pub pvalue: PValueMethod,
    /// Fit per-location ZIP baselines to each dataset's pre-outbreak weeks
    /// instead of scanning with the true parameters.
    #[serde(default)]
    pub estimate_baselines: bool,
}

impl ExperimentConfig {
    pub fn new(scenarios: Vec<Scenario>, master_seed: u64) -> Self {
        Self {
            scenarios,
            alphas: default_alphas(),
            methods: default_methods(),
            replicates: default_replicates(),
            outbreaks_per_scenario: default_outbreaks(),
            master_seed,
            pvalue: default_pvalue(),
            estimate_baselines: false,
        }
    }

    /// 1000 outbreaks per scenario against 999 null replicates.
    pub fn full_size(mut self) -> Self {
        self.replicates = 999;
        self.outbreaks_per_scenario = 1000;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.methods.is_empty() || self.alphas.is_empty() {
            return Err(Error::Domain("experiment needs scenarios, methods and alphas".into()));
        }
        if self.replicates == 0 || self.outbreaks_per_scenario == 0 {
            return Err(Error::Domain("replicate and outbreak counts must be >= 1".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Domain(format!("significance level {a} outside (0, 1)")));
        }
        if self.pvalue == PValueMethod::Empirical {
            return Err(Error::Domain(
                "simulation P-values must be monte-carlo or gumbel".into(),
            ));
        }
        self.scenarios.iter().try_for_each(Scenario::validate)
    }
}

/// Scan outcome of one dataset in one outbreak week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekOutcome {
    pub week: usize,
    pub lambda_star: f64,
    pub q_hat: f64,
    pub duration: usize,
    pub zone: Zone,
    pub p_value: f64,
    /// Spatial precision, recall and F of the most likely cluster; absent
    /// for non-outbreaks.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub dataset: usize,
    pub truth: Option<Zone>,
    pub weeks: Vec<WeekOutcome>,
}

/// Detection summary of one dataset at one significance level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub detection_week: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f: Option<f64>,
    pub p_values: Vec<f64>,
}

impl DatasetOutcome {
    /// First week with `P < alpha`.
    pub fn detection(&self, alpha: f64) -> Option<&WeekOutcome> {
        self.weeks.iter().find(|w| w.p_value < alpha)
    }

    pub fn metrics(&self, alpha: f64) -> DetectionMetrics {
        let hit = self.detection(alpha);
        DetectionMetrics {
            detection_week: hit.map(|w| w.week),
            precision: hit.and_then(|w| w.precision),
            recall: hit.and_then(|w| w.recall),
            f: hit.and_then(|w| w.f),
            p_values: self.weeks.iter().map(|w| w.p_value).collect(),
        }
    }

    pub fn week(&self, week: usize) -> Option<&WeekOutcome> {
        self.weeks.iter().find(|w| w.week == week)
    }
}

/// All datasets of one scenario scanned with one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRun {
    pub scenario_index: usize,
    pub scenario: Scenario,
    pub method: StatisticKind,
    pub null_replicates: ReplicateSet,
    pub datasets: Vec<DatasetOutcome>,
}

impl ScenarioRun {
    /// Fraction of datasets detected at or before `week`.
    pub fn detected_by(&self, alpha: f64, week: usize) -> f64 {
        let hits = self
            .datasets
            .iter()
            .filter(|d| d.detection(alpha).is_some_and(|w| w.week <= week))
            .count();
        hits as f64 / self.datasets.len() as f64
    }

    /// F at first detection, for datasets first detected by `week`.
    pub fn f_at_detection(&self, alpha: f64, week: usize) -> Vec<f64> {
        self.datasets
            .iter()
            .filter_map(|d| d.detection(alpha))
            .filter(|w| w.week <= week)
            .filter_map(|w| w.f)
            .collect()
    }

    /// F in `week` for datasets signalling (`P < alpha`) in that week.
    pub fn f_in_week(&self, alpha: f64, week: usize) -> Vec<f64> {
        self.datasets
            .iter()
            .filter_map(|d| d.week(week))
            .filter(|w| w.p_value < alpha)
            .filter_map(|w| w.f)
            .collect()
    }

    /// Fraction with `P < alpha` in outbreak week 1.
    pub fn first_week_rejection_rate(&self, alpha: f64) -> f64 {
        let hits = self
            .datasets
            .iter()
            .filter(|d| d.week(1).is_some_and(|w| w.p_value < alpha))
            .count();
        hits as f64 / self.datasets.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<ScenarioRun>,
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], prob: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = prob.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Central exact-binomial envelope `[lo, hi]` on the count of successes that
/// holds with probability at least `coverage`.
pub fn binomial_envelope(trials: u64, prob: f64, coverage: f64) -> (u64, u64) {
    let dist = Binomial::new(prob, trials).expect("valid binomial parameters");
    let tail = (1.0 - coverage) / 2.0;
    (dist.inverse_cdf(tail), dist.inverse_cdf(1.0 - tail))
}

struct Geometry {
    dist: DistanceMatrix,
    zones: ZoneSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct NullKey {
    locations: usize,
    max_zone_size: usize,
    max_duration: usize,
    p: u64,
    mu: u64,
    method: StatisticKind,
}

/// Scan baselines for a statistic: ZIP parameters as given, or Poisson
/// baselines at the ZIP expected counts for EB-POI.
pub fn scoring_baselines(zip: &BaselineGrid, method: StatisticKind) -> Result<BaselineGrid> {
    match method {
        StatisticKind::EbZip => Ok(zip.clone()),
        StatisticKind::EbPoisson => zip.expected_counts(),
    }
}

/// Per-location constant ZIP fits to the pre-outbreak weeks. Locations with
/// an all-zero history fall back to the pooled fit; a fit that fails to
/// converge keeps its last iterate.
fn estimated_baselines(grid: &CountGrid, scenario: &Scenario) -> Result<BaselineGrid> {
    let history = |i: usize| -> Vec<u32> {
        (scenario.outbreak_weeks + 1..=grid.periods())
            .map(|t| grid.get(i, t))
            .collect()
    };
    let fit = |counts: Vec<u32>| match zip_fit_em(&HistoricalSeries::new(counts)?, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(f) => Ok(f.params),
        Err(Error::NonConvergence { last, .. }) => Ok(last),
        Err(e) => Err(e),
    };
    let pooled: Vec<u32> = (0..grid.locations()).flat_map(history).collect();
    let pooled = fit(pooled)?;
    let mut params = Vec::with_capacity(grid.locations() * scenario.max_duration);
    for i in 0..grid.locations() {
        let p = match fit(history(i)) {
            Ok(p) => p,
            Err(Error::DegenerateSample(_)) => pooled,
            Err(e) => return Err(e),
        };
        params.extend(std::iter::repeat_n(p, scenario.max_duration));
    }
    BaselineGrid::new(grid.locations(), scenario.max_duration, params)
}

fn run_dataset(
    config: &ExperimentConfig,
    scenario: &Scenario,
    geometry: &Geometry,
    nulls: &[(StatisticKind, &ReplicateSet)],
    dataset: usize,
) -> Result<Vec<DatasetOutcome>> {
    let seed = config.master_seed;
    let truth = if let Some(zone) = &scenario.outbreak_zone {
        Some(Zone::new(zone.clone())?)
    } else if scenario.is_null() {
        None
    } else {
        let mut rng = substream(seed, &[tag::OUTBREAK_ZONE, scenario.seed, dataset as u64]);
        Some(random_outbreak_zone(&geometry.dist, scenario.outbreak_size, &mut rng)?)
    };
    let mut rng = substream(seed, &[tag::SCENARIO_DATA, scenario.seed, dataset as u64]);
    let grid = generate_scenario_data(scenario, truth.as_ref(), &mut rng)?;

    let zip_baselines = if config.estimate_baselines {
        estimated_baselines(&grid, scenario)?
    } else {
        BaselineGrid::constant(scenario.locations, scenario.max_duration, scenario.baseline_params()?)?
    };

    let mut outcomes = Vec::with_capacity(nulls.len());
    for &(method, null) in nulls {
        let baselines = scoring_baselines(&zip_baselines, method)?;
        let options = ScanOptions::new(method, scenario.max_duration);
        let mut weeks = Vec::with_capacity(scenario.outbreak_weeks);
        for week in 1..=scenario.outbreak_weeks {
            let view = grid.recent(scenario.outbreak_weeks - week, scenario.max_duration)?;
            let result = scan(&view, &baselines, &geometry.zones, &options)?;
            let report = pvalue(result.lambda_star, null, config.pvalue)?;
            let zone = geometry.zones.get(result.mlc.window.zone).clone();
            let (precision, recall, f) = match &truth {
                Some(t) => {
                    let (sp, sr) = spatial_precision_recall(&zone, t);
                    (Some(sp), Some(sr), Some(harmonic_f(sp, sr)))
                }
                None => (None, None, None),
            };
            weeks.push(WeekOutcome {
                week,
                lambda_star: result.lambda_star,
                q_hat: result.mlc.q_hat,
                duration: result.mlc.window.duration,
                zone,
                p_value: report.p_value,
                precision,
                recall,
                f,
            });
        }
        outcomes.push(DatasetOutcome {
            dataset,
            truth: truth.clone(),
            weeks,
        });
    }
    Ok(outcomes)
}

/// Runs every scenario with every statistic. Null replicate sets are shared
/// per baseline setting and statistic.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;

    let mut geometries: BTreeMap<(usize, usize), Geometry> = BTreeMap::new();
    for s in &config.scenarios {
        let key = (s.locations, s.max_zone_size.min(s.locations));
        if geometries.contains_key(&key) {
            continue;
        }
        let dist = DistanceMatrix::euclidean(&place_locations(s.locations, config.master_seed))?;
        let zones = knn_zones(&dist, key.1 - 1)?;
        geometries.insert(key, Geometry { dist, zones });
    }

    let mut null_sets: BTreeMap<NullKey, ReplicateSet> = BTreeMap::new();
    for s in &config.scenarios {
        let zone_size = s.max_zone_size.min(s.locations);
        for &method in &config.methods {
            let key = NullKey {
                locations: s.locations,
                max_zone_size: zone_size,
                max_duration: s.max_duration,
                p: s.p.to_bits(),
                mu: s.mu.to_bits(),
                method,
            };
            if null_sets.contains_key(&key) {
                continue;
            }
            let simulate = BaselineGrid::constant(s.locations, s.max_duration, s.baseline_params()?)?;
            let score = scoring_baselines(&simulate, method)?;
            let geometry = &geometries[&(s.locations, zone_size)];
            let options = ScanOptions::new(method, s.max_duration);
            let set = run_replication_with(
                &simulate,
                &score,
                &geometry.zones,
                &options,
                config.replicates,
                config.master_seed,
            )?;
            null_sets.insert(key, set);
        }
    }

    let mut runs = Vec::new();
    for (scenario_index, s) in config.scenarios.iter().enumerate() {
        let zone_size = s.max_zone_size.min(s.locations);
        let geometry = &geometries[&(s.locations, zone_size)];
        let nulls: Vec<(StatisticKind, &ReplicateSet)> = config
            .methods
            .iter()
            .map(|&method| {
                let key = NullKey {
                    locations: s.locations,
                    max_zone_size: zone_size,
                    max_duration: s.max_duration,
                    p: s.p.to_bits(),
                    mu: s.mu.to_bits(),
                    method,
                };
                (method, &null_sets[&key])
            })
            .collect();
        let per_dataset = (0..config.outbreaks_per_scenario)
            .into_par_iter()
            .map(|k| run_dataset(config, s, geometry, &nulls, k))
            .collect::<Result<Vec<_>>>()?;
        for (m, &(method, null)) in nulls.iter().enumerate() {
            runs.push(ScenarioRun {
                scenario_index,
                scenario: s.clone(),
                method,
                null_replicates: null.clone(),
                datasets: per_dataset.iter().map(|d| d[m].clone()).collect(),
            });
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        runs,
    })
}

/// One row per scenario x method x alpha x outbreak week.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub scenario: usize,
    pub name: String,
    pub locations: usize,
    pub p: f64,
    pub mu: f64,
    pub relative_risk: f64,
    pub outbreak_size: usize,
    pub method: StatisticKind,
    pub alpha: f64,
    pub week: usize,
    pub datasets: usize,
    /// Fraction first detected in this week.
    pub first_detected: f64,
    /// Fraction detected in this week or earlier.
    pub detected_by_week: f64,
    /// Fraction with `P < alpha` in this week.
    pub signalling: f64,
    pub f_median: Option<f64>,
    pub f_p05: Option<f64>,
    pub f_p95: Option<f64>,
    pub precision_median: Option<f64>,
    pub recall_median: Option<f64>,
}

/// Week-1 rejection rates of non-outbreak scenarios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsePositiveRow {
    pub scenario: usize,
    pub name: String,
    pub locations: usize,
    pub p: f64,
    pub mu: f64,
    pub method: StatisticKind,
    pub alpha: f64,
    pub datasets: usize,
    pub false_positives: usize,
    pub rate: f64,
    /// Exact binomial 99% envelope of the rate under nominal calibration.
    pub envelope_low: f64,
    pub envelope_high: f64,
}

/// Raw per-dataset, per-week scan outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRow {
    pub scenario: usize,
    pub method: StatisticKind,
    pub dataset: usize,
    pub week: usize,
    pub lambda_star: f64,
    pub q_hat: f64,
    pub duration: usize,
    pub zone_size: usize,
    pub p_value: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f: Option<f64>,
}

impl ExperimentResult {
    pub fn detection_table(&self) -> Vec<DetectionRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            let s = &run.scenario;
            let total = run.datasets.len() as f64;
            for &alpha in &self.config.alphas {
                for week in 1..=s.outbreak_weeks {
                    let first = run
                        .datasets
                        .iter()
                        .filter(|d| d.detection(alpha).is_some_and(|w| w.week == week))
                        .count();
                    let signal: Vec<&WeekOutcome> = run
                        .datasets
                        .iter()
                        .filter_map(|d| d.week(week))
                        .filter(|w| w.p_value < alpha)
                        .collect();
                    let fs: Vec<f64> = signal.iter().filter_map(|w| w.f).collect();
                    let sps: Vec<f64> = signal.iter().filter_map(|w| w.precision).collect();
                    let srs: Vec<f64> = signal.iter().filter_map(|w| w.recall).collect();
                    rows.push(DetectionRow {
                        scenario: run.scenario_index,
                        name: s.name.clone(),
                        locations: s.locations,
                        p: s.p,
                        mu: s.mu,
                        relative_risk: s.relative_risk,
                        outbreak_size: s.outbreak_zone.as_ref().map_or(s.outbreak_size, Vec::len),
                        method: run.method,
                        alpha,
                        week,
                        datasets: run.datasets.len(),
                        first_detected: first as f64 / total,
                        detected_by_week: run.detected_by(alpha, week),
                        signalling: signal.len() as f64 / total,
                        f_median: median(&fs),
                        f_p05: quantile(&fs, 0.05),
                        f_p95: quantile(&fs, 0.95),
                        precision_median: median(&sps),
                        recall_median: median(&srs),
                    });
                }
            }
        }
        rows
    }

    pub fn false_positive_table(&self) -> Vec<FalsePositiveRow> {
        let mut rows = Vec::new();
        for run in self.runs.iter().filter(|r| r.scenario.is_null()) {
            let n = run.datasets.len();
            for &alpha in &self.config.alphas {
                let rate = run.first_week_rejection_rate(alpha);
                let (lo, hi) = binomial_envelope(n as u64, alpha, 0.99);
                rows.push(FalsePositiveRow {
                    scenario: run.scenario_index,
                    name: run.scenario.name.clone(),
                    locations: run.scenario.locations,
                    p: run.scenario.p,
                    mu: run.scenario.mu,
                    method: run.method,
                    alpha,
                    datasets: n,
                    false_positives: (rate * n as f64).round() as usize,
                    rate,
                    envelope_low: lo as f64 / n as f64,
                    envelope_high: hi as f64 / n as f64,
                });
            }
        }
        rows
    }

    pub fn dataset_table(&self) -> Vec<DatasetRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for d in &run.datasets {
                for w in &d.weeks {
                    rows.push(DatasetRow {
                        scenario: run.scenario_index,
                        method: run.method,
                        dataset: d.dataset,
                        week: w.week,
                        lambda_star: w.lambda_star,
                        q_hat: w.q_hat,
                        duration: w.duration,
                        zone_size: w.zone.len(),
                        p_value: w.p_value,
                        precision: w.precision,
                        recall: w.recall,
                        f: w.f,
                    });
                }
            }
        }
        rows
    }

    /// Writes `detection.csv`, `false_positive.csv` and `datasets.csv`.
    pub fn write_tables(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("detection.csv"), &self.detection_table())?;
        write_csv(&dir.join("false_positive.csv"), &self.false_positive_table())?;
        write_csv(&dir.join("datasets.csv"), &self.dataset_table())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()
}
