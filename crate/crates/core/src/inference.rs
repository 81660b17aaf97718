//! Hypothesis testing for the scan statistic: Monte Carlo replication under
//! the null, Gumbel tail approximation and empirical P-values.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::scan::{scan, BaselineGrid, CountGrid, ScanOptions};
use crate::zip::zip_sample;
use crate::zones::ZoneSet;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Smallest Gumbel P-value reported.
pub const GUMBEL_P_FLOOR: f64 = 1e-300;

/// Scan statistic maxima from null replicates (or from past surveillance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSet {
    /// `values[j]` came from sub-stream `(master_seed, j)` when seeded.
    pub values: Vec<f64>,
    pub master_seed: Option<u64>,
}

impl ReplicateSet {
    pub fn new(values: Vec<f64>, master_seed: Option<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("replicate set must hold at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("replicate value {bad} must be finite and >= 0")));
        }
        Ok(Self { values, master_seed })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of replicates scoring exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v == 0.0).count() as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    MonteCarlo,
    Gumbel,
    Empirical,
}

impl fmt::Display for PValueMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PValueMethod::MonteCarlo => "monte-carlo",
            PValueMethod::Gumbel => "gumbel",
            PValueMethod::Empirical => "empirical",
        })
    }
}

impl FromStr for PValueMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monte-carlo" => Ok(PValueMethod::MonteCarlo),
            "gumbel" => Ok(PValueMethod::Gumbel),
            "empirical" => Ok(PValueMethod::Empirical),
            other => Err(Error::Domain(format!("unknown P-value method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelParams {
    pub location: f64,
    pub scale: f64,
}

impl GumbelParams {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && location.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "Gumbel needs finite location and scale > 0, got ({location}, {scale})"
            )));
        }
        Ok(Self { location, scale })
    }

    pub fn mean(&self) -> f64 {
        self.location + EULER_GAMMA * self.scale
    }

    pub fn variance(&self) -> f64 {
        std::f64::consts::PI.powi(2) / 6.0 * self.scale * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub observed: f64,
    pub method: PValueMethod,
    pub p_value: f64,
    /// Replicate count, or history length for empirical P-values.
    pub sample_size: usize,
    /// Fraction of reference values equal to zero.
    pub zero_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gumbel: Option<GumbelParams>,
}

fn rank_pvalue(observed: f64, reference: &[f64]) -> f64 {
    let exceed = reference.iter().filter(|&&v| v > observed).count();
    (1 + exceed) as f64 / (1 + reference.len()) as f64
}

/// `(1 + #{replicates > observed}) / (1 + R)`; ties do not count.
pub fn monte_carlo_pvalue(observed: f64, replicates: &ReplicateSet) -> PValueReport {
    PValueReport {
        observed,
        method: PValueMethod::MonteCarlo,
        p_value: rank_pvalue(observed, &replicates.values),
        sample_size: replicates.len(),
        zero_fraction: replicates.zero_fraction(),
        gumbel: None,
    }
}

/// Rank P-value against previously computed scan statistics.
pub fn empirical_pvalue(observed: f64, history: &[f64]) -> Result<PValueReport> {
    if history.is_empty() {
        return Err(Error::Domain("empirical P-value needs a non-empty history".into()));
    }
    let zeros = history.iter().filter(|&&v| v == 0.0).count();
    Ok(PValueReport {
        observed,
        method: PValueMethod::Empirical,
        p_value: rank_pvalue(observed, history),
        sample_size: history.len(),
        zero_fraction: zeros as f64 / history.len() as f64,
        gumbel: None,
    })
}

/// Method-of-moments Gumbel fit (zeros included).
pub fn gumbel_fit(replicates: &ReplicateSet) -> Result<GumbelParams> {
    let values = &replicates.values;
    if values.len() < 2 {
        return Err(Error::DegenerateReplicates(format!(
            "Gumbel fit needs at least 2 replicates, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::DegenerateReplicates("replicates have zero variance".into()));
    }
    let scale = sd * 6f64.sqrt() / std::f64::consts::PI;
    GumbelParams::new(mean - EULER_GAMMA * scale, scale)
}

/// Upper-tail probability of `observed` under the fitted Gumbel.
pub fn gumbel_pvalue(observed: f64, params: GumbelParams) -> PValueReport {
    let z = (observed - params.location) / params.scale;
    let p = -(-(-z).exp()).exp_m1();
    PValueReport {
        observed,
        method: PValueMethod::Gumbel,
        p_value: p.clamp(GUMBEL_P_FLOOR, 1.0),
        sample_size: 0,
        zero_fraction: 0.0,
        gumbel: Some(params),
    }
}

/// Fits the replicates and reports the Gumbel tail P-value.
pub fn gumbel_pvalue_from_replicates(observed: f64, replicates: &ReplicateSet) -> Result<PValueReport> {
    let params = gumbel_fit(replicates)?;
    Ok(PValueReport {
        sample_size: replicates.len(),
        zero_fraction: replicates.zero_fraction(),
        ..gumbel_pvalue(observed, params)
    })
}

/// P-value of `observed` against a replicate set with the given method.
pub fn pvalue(observed: f64, replicates: &ReplicateSet, method: PValueMethod) -> Result<PValueReport> {
    match method {
        PValueMethod::MonteCarlo => Ok(monte_carlo_pvalue(observed, replicates)),
        PValueMethod::Gumbel => gumbel_pvalue_from_replicates(observed, replicates),
        PValueMethod::Empirical => empirical_pvalue(observed, &replicates.values),
    }
}

/// Draws every cell independently from its null ZIP distribution.
pub fn simulate_null_grid<R: Rng + ?Sized>(baselines: &BaselineGrid, rng: &mut R) -> CountGrid {
    let y = baselines
        .as_slice()
        .iter()
        .map(|&params| zip_sample(params, rng))
        .collect();
    CountGrid::new(baselines.locations(), baselines.periods(), y).expect("baseline dimensions are valid")
}

/// Null grid of replicate `index` under `master_seed`.
pub fn replicate_grid(baselines: &BaselineGrid, master_seed: u64, index: usize) -> CountGrid {
    let mut rng = substream(master_seed, &[tag::NULL_REPLICATE, index as u64]);
    simulate_null_grid(baselines, &mut rng)
}

/// Scan statistics of `r` simulated null datasets, scanned exactly like the
/// observed data. Replicate `j` always uses sub-stream `(master_seed, j)`.
pub fn run_replication(
    baselines: &BaselineGrid,
    zones: &ZoneSet,
    options: &ScanOptions,
    r: usize,
    master_seed: u64,
) -> Result<ReplicateSet> {
    run_replication_with(baselines, baselines, zones, options, r, master_seed)
}

/// [`run_replication`] with data simulated from `simulate` and scored
/// against `score`, e.g. ZIP nulls scanned with Poisson expected counts.
pub fn run_replication_with(
    simulate: &BaselineGrid,
    score: &BaselineGrid,
    zones: &ZoneSet,
    options: &ScanOptions,
    r: usize,
    master_seed: u64,
) -> Result<ReplicateSet> {
    if r == 0 {
        return Err(Error::Domain("replication needs R >= 1".into()));
    }
    let options = options.with_top_k(1);
    let values = (0..r)
        .into_par_iter()
        .map(|j| {
            let grid = replicate_grid(simulate, master_seed, j);
            scan(&grid, score, zones, &options).map(|res| res.lambda_star)
        })
        .collect::<Result<Vec<f64>>>()?;
    ReplicateSet::new(values, Some(master_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zip::ZipParams;

    fn reps(v: &[f64]) -> ReplicateSet {
        ReplicateSet::new(v.to_vec(), None).unwrap()
    }

    #[test]
    fn monte_carlo_examples() {
        assert_eq!(monte_carlo_pvalue(5.0, &reps(&[6.1, 4.9, 3.0])).p_value, 0.5);
        let r = reps(&vec![1.0; 999]);
        assert_eq!(monte_carlo_pvalue(2.0, &r).p_value, 1.0 / 1000.0);
        // Ties are not exceedances: (1 + 0) / (1 + 3).
        assert_eq!(monte_carlo_pvalue(0.0, &reps(&[0.0, 0.0, 0.0])).p_value, 0.25);
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(empirical_pvalue(5.0, &[6.1, 4.9, 3.0]).unwrap().p_value, 0.5);
        assert_eq!(empirical_pvalue(10.0, &[1.0; 51]).unwrap().p_value, 1.0 / 52.0);
        assert_eq!(empirical_pvalue(0.5, &[0.0; 7]).unwrap().p_value, 1.0 / 8.0);
        assert!(empirical_pvalue(1.0, &[]).is_err());
    }

    #[test]
    fn gumbel_fit_unit_scale() {
        // Two points symmetric about 10 with sample sd pi/sqrt(6).
        let s = std::f64::consts::PI / 6f64.sqrt();
        let half = s / 2f64.sqrt();
        let g = gumbel_fit(&reps(&[10.0 - half, 10.0 + half])).unwrap();
        assert!((g.scale - 1.0).abs() < 1e-12);
        assert!((g.location - (10.0 - EULER_GAMMA)).abs() < 1e-12);
        assert!((g.location - 9.422_784_3).abs() < 1e-7);
    }

    #[test]
    fn gumbel_fit_degenerate() {
        assert!(matches!(
            gumbel_fit(&reps(&[2.0, 2.0, 2.0])),
            Err(Error::DegenerateReplicates(_))
        ));
        assert!(matches!(gumbel_fit(&reps(&[2.0])), Err(Error::DegenerateReplicates(_))));
    }

    #[test]
    fn gumbel_pvalue_tails() {
        let g = GumbelParams::new(3.0, 2.0).unwrap();
        assert!((gumbel_pvalue(3.0, g).p_value - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((gumbel_pvalue(3.0, g).p_value - 0.632_121).abs() < 1e-6);
        assert_eq!(gumbel_pvalue(1e6, g).p_value, GUMBEL_P_FLOOR);
        assert_eq!(gumbel_pvalue(-1e6, g).p_value, 1.0);
        assert!(gumbel_pvalue(60.0, g).p_value > 0.0);
    }

    #[test]
    fn replicate_set_validation() {
        assert!(ReplicateSet::new(vec![], None).is_err());
        assert!(ReplicateSet::new(vec![-1.0], None).is_err());
        assert!(ReplicateSet::new(vec![f64::NAN], None).is_err());
        assert_eq!(reps(&[0.0, 1.0, 0.0, 2.0]).zero_fraction(), 0.5);
    }

    #[test]
    fn null_grid_tiny_means_are_zero() {
        let b = BaselineGrid::constant(4, 3, ZipParams::new(0.5, 1e-11).unwrap()).unwrap();
        let g = replicate_grid(&b, 9, 0);
        assert!(g.as_slice().iter().all(|&y| y == 0));
    }

    #[test]
    fn null_grid_is_seed_deterministic() {
        let b = BaselineGrid::constant(3, 2, ZipParams::new(0.2, 4.0).unwrap()).unwrap();
        assert_eq!(replicate_grid(&b, 1, 3), replicate_grid(&b, 1, 3));
        assert_ne!(replicate_grid(&b, 1, 3), replicate_grid(&b, 1, 4));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [PValueMethod::MonteCarlo, PValueMethod::Gumbel, PValueMethod::Empirical] {
            assert_eq!(m.to_string().parse::<PValueMethod>().unwrap(), m);
        }
    }
}
