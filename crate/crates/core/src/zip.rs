//! Zero-inflated Poisson kernels and constant-parameter ZIP estimation.
//!
//! A ZIP(p, mu) count is a structural zero with probability `p` and a
//! Poisson(mu) draw otherwise. All likelihood arithmetic stays in log space;
//! factorials go through `ln_gamma` so counts in the hundreds are fine.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `p` must stay strictly below `1 - P_MARGIN`.
pub const P_MARGIN: f64 = 1e-12;
/// `mu` must stay strictly above this floor.
pub const MU_FLOOR: f64 = 1e-12;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Parameters of a zero-inflated Poisson distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawZipParams", into = "RawZipParams")]
pub struct ZipParams {
    p: f64,
    mu: f64,
}

#[derive(Serialize, Deserialize)]
struct RawZipParams {
    p: f64,
    mu: f64,
}

impl TryFrom<RawZipParams> for ZipParams {
    type Error = Error;
    fn try_from(raw: RawZipParams) -> Result<Self> {
        ZipParams::new(raw.p, raw.mu)
    }
}

impl From<ZipParams> for RawZipParams {
    fn from(z: ZipParams) -> Self {
        RawZipParams { p: z.p, mu: z.mu }
    }
}

impl ZipParams {
    pub fn new(p: f64, mu: f64) -> Result<Self> {
        if !(0.0..1.0 - P_MARGIN).contains(&p) {
            return Err(Error::ParameterDomain(format!(
                "structural-zero probability p={p} outside [0, 1)"
            )));
        }
        if !(mu > MU_FLOOR && mu.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "Poisson mean mu={mu} must be finite and > {MU_FLOOR:e}"
            )));
        }
        Ok(Self { p, mu })
    }

    /// Plain Poisson(mu).
    pub fn poisson(mu: f64) -> Result<Self> {
        Self::new(0.0, mu)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Same structural-zero probability, Poisson mean scaled by `factor`.
    pub fn with_scaled_mean(&self, factor: f64) -> Result<Self> {
        Self::new(self.p, self.mu * factor)
    }
}

/// `ln(e^a + e^b)` without overflow.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(p + (1 - p) e^{-mu})`, the log-probability of a zero count.
pub(crate) fn log_zero_prob(p: f64, mu: f64) -> f64 {
    if p == 0.0 {
        -mu
    } else {
        log_add_exp(p.ln(), (-p).ln_1p() - mu)
    }
}

pub fn ln_factorial(y: u32) -> f64 {
    if y < 2 {
        0.0
    } else {
        ln_gamma(f64::from(y) + 1.0)
    }
}

/// Log of the ZIP probability mass function at `y`.
pub fn zip_log_pmf(y: u32, params: ZipParams) -> f64 {
    let ZipParams { p, mu } = params;
    if y == 0 {
        log_zero_prob(p, mu)
    } else {
        (-p).ln_1p() + f64::from(y) * mu.ln() - mu - ln_factorial(y)
    }
}

/// Mean and variance of ZIP(p, mu).
pub fn zip_moments(params: ZipParams) -> (f64, f64) {
    let ZipParams { p, mu } = params;
    let mean = (1.0 - p) * mu;
    (mean, mean + p * (1.0 - p) * mu * mu)
}

/// Draw one ZIP count.
///
/// Always consumes the structural-zero uniform first, so two parameter sets
/// with the same `p` walk the stream identically up to the Poisson draw.
pub fn zip_sample<R: Rng + ?Sized>(params: ZipParams, rng: &mut R) -> u32 {
    let structural: f64 = rng.random();
    if structural < params.p {
        return 0;
    }
    // mu is validated finite and positive, far below the sampler's limit.
    let poisson = Poisson::new(params.mu).expect("validated Poisson mean");
    let draw: f64 = poisson.sample(rng);
    if draw >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        draw as u32
    }
}

/// Past outbreak-free counts of one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalSeries(Vec<u32>);

impl HistoricalSeries {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Domain(format!(
                "historical series needs at least 2 counts, got {}",
                counts.len()
            )));
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipFit {
    pub params: ZipParams,
    pub iterations: usize,
    /// Observed-data log-likelihood, starting at the initial guess.
    pub loglik_trace: Vec<f64>,
}

fn series_loglik(zeros: f64, positives: &[u32], p: f64, mu: f64) -> f64 {
    let log_nonstructural = (-p).ln_1p();
    let log_mu = mu.ln();
    let pos: f64 = positives
        .iter()
        .map(|&y| log_nonstructural + f64::from(y) * log_mu - mu - ln_factorial(y))
        .sum();
    zeros * log_zero_prob(p, mu) + pos
}

/// Maximum-likelihood ZIP parameters for one location's history, by EM.
///
/// Stops when the relative change of the observed-data log-likelihood drops
/// below `tol`.
pub fn zip_fit_em(series: &HistoricalSeries, tol: f64, max_iter: usize) -> Result<ZipFit> {
    let counts = series.counts();
    let n = counts.len() as f64;
    let positives: Vec<u32> = counts.iter().copied().filter(|&y| y > 0).collect();
    if positives.is_empty() {
        return Err(Error::DegenerateSample(
            "all historical counts are zero; p and mu are not identifiable".into(),
        ));
    }
    let zeros = (counts.len() - positives.len()) as f64;
    let total: f64 = positives.iter().map(|&y| f64::from(y)).sum();

    let mean_pos = total / positives.len() as f64;
    let e0 = (-mean_pos).exp();
    let mut p = ((zeros / n - e0) / (1.0 - e0)).clamp(1e-4, 1.0 - 1e-4);
    let mut mu = mean_pos;
    let mut ll = series_loglik(zeros, &positives, p, mu);
    let mut trace = vec![ll];

    for iteration in 1..=max_iter {
        // E-step: posterior probability that a zero is structural.
        let delta = if p == 0.0 {
            0.0
        } else {
            p / (p + (1.0 - p) * (-mu).exp())
        };
        let expected_structural = zeros * delta;
        // M-step.
        p = (expected_structural / n).min(1.0 - 2.0 * P_MARGIN);
        mu = (total / (n - expected_structural)).max(2.0 * MU_FLOOR);

        let next = series_loglik(zeros, &positives, p, mu);
        trace.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change <= tol * ll.abs() {
            return Ok(ZipFit {
                params: ZipParams::new(p, mu)?,
                iterations: iteration,
                loglik_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        last: ZipParams::new(p, mu)?,
        iterations: max_iter,
    })
}
