//! Space-time window scoring and scan maximization.
//!
//! Windows are a zone paired with a duration `d`, covering times `1..=d`
//! counted backwards from the present (`t = 1` is the newest period). The
//! EB-ZIP score estimates the window's relative risk by EM and reports the
//! log-likelihood ratio against the baseline; EB-POI uses the closed-form
//! Poisson estimate.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zip::{log_zero_prob, ZipParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::zones::ZoneSet;

/// Observed counts, `n` locations by `t` periods, newest period first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountGrid {
    n: usize,
    t: usize,
    y: Vec<u32>,
}

impl CountGrid {
    /// `y` is row-major by location; `y[i * t]` is location `i` at time 1.
    pub fn new(n: usize, t: usize, y: Vec<u32>) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::Domain(format!(
                "count grid needs n >= 1 and T >= 1, got {n}x{t}"
            )));
        }
        if y.len() != n * t {
            return Err(Error::DimensionMismatch(format!(
                "count grid {n}x{t} needs {} cells, got {}",
                n * t,
                y.len()
            )));
        }
        Ok(Self { n, t, y })
    }

    pub fn locations(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    /// Count at location `i` (0-based) and time `time` (1 = newest).
    pub fn get(&self, i: usize, time: usize) -> u32 {
        self.y[i * self.t + time - 1]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.y
    }

    /// The `len` periods preceding the newest `skip` ones, renumbered so the
    /// first kept period becomes time 1.
    pub fn recent(&self, skip: usize, len: usize) -> Result<Self> {
        if len == 0 || skip + len > self.t {
            return Err(Error::Domain(format!(
                "cannot take {len} periods after skipping {skip} of {}",
                self.t
            )));
        }
        let mut y = Vec::with_capacity(self.n * len);
        for i in 0..self.n {
            let row = &self.y[i * self.t..(i + 1) * self.t];
            y.extend_from_slice(&row[skip..skip + len]);
        }
        Self::new(self.n, len, y)
    }
}

/// Null-hypothesis ZIP parameters for every cell of a [`CountGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGrid {
    n: usize,
    t: usize,
    params: Vec<ZipParams>,
}

impl BaselineGrid {
    pub fn new(n: usize, t: usize, params: Vec<ZipParams>) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::Domain(format!(
                "baseline grid needs n >= 1 and T >= 1, got {n}x{t}"
            )));
        }
        if params.len() != n * t {
            return Err(Error::DimensionMismatch(format!(
                "baseline grid {n}x{t} needs {} cells, got {}",
                n * t,
                params.len()
            )));
        }
        Ok(Self { n, t, params })
    }

    pub fn constant(n: usize, t: usize, params: ZipParams) -> Result<Self> {
        Self::new(n, t, vec![params; n * t])
    }

    pub fn locations(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    pub fn get(&self, i: usize, time: usize) -> ZipParams {
        self.params[i * self.t + time - 1]
    }

    pub fn as_slice(&self) -> &[ZipParams] {
        &self.params
    }

    /// Poisson baselines with the ZIP expected counts `(1 - p) mu` as means.
    pub fn expected_counts(&self) -> Result<Self> {
        let params = self
            .params
            .iter()
            .map(|z| ZipParams::poisson((1.0 - z.p()) * z.mu()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n, self.t, params)
    }

    fn check_aligned(&self, counts: &CountGrid) -> Result<()> {
        if self.n != counts.n || self.t != counts.t {
            return Err(Error::DimensionMismatch(format!(
                "counts are {}x{} but baselines are {}x{}",
                counts.n, counts.t, self.n, self.t
            )));
        }
        Ok(())
    }
}

/// Which window statistic to scan with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    /// Expectation-based zero-inflated Poisson.
    EbZip,
    /// Expectation-based Poisson; structural-zero probabilities are ignored.
    EbPoisson,
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatisticKind::EbZip => "eb-zip",
            StatisticKind::EbPoisson => "eb-poisson",
        })
    }
}

impl FromStr for StatisticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eb-zip" => Ok(StatisticKind::EbZip),
            "eb-poisson" | "eb-poi" => Ok(StatisticKind::EbPoisson),
            other => Err(Error::Domain(format!("unknown statistic '{other}'"))),
        }
    }
}

/// EM stopping rule: stop once `|L(q_k) / L(q_{k-1}) - 1| < tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// One space-time cell inside a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub y: u32,
    pub params: ZipParams,
}

impl Cell {
    pub fn new(y: u32, params: ZipParams) -> Self {
        Self { y, params }
    }
}

/// A zone (index into the scanned [`ZoneSet`]) and a duration anchored at
/// the present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub zone: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: Window,
    pub q_hat: f64,
    pub lambda: f64,
    pub em_iterations: usize,
    pub converged: bool,
}

impl WindowScore {
    /// Ranking order: larger lambda, then shorter duration, then earlier zone.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .lambda
            .total_cmp(&self.lambda)
            .then(self.window.duration.cmp(&other.window.duration))
            .then(self.window.zone.cmp(&other.window.zone))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub statistic: StatisticKind,
    pub lambda_star: f64,
    pub mlc: WindowScore,
    /// Top windows, best first.
    pub ranked: Vec<WindowScore>,
    pub windows_evaluated: usize,
    pub non_converged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub statistic: StatisticKind,
    pub max_duration: usize,
    pub top_k: usize,
    pub em: EmOptions,
}

impl ScanOptions {
    pub fn new(statistic: StatisticKind, max_duration: usize) -> Self {
        Self {
            statistic,
            max_duration,
            top_k: 1,
            em: EmOptions::default(),
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }
}

/// Result of the per-window EM.
#[derive(Debug, Clone, PartialEq)]
pub struct EmEstimate {
    pub q_hat: f64,
    /// Structural-zero posterior of each input cell at the final E-step.
    pub deltas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Zero-count cells sharing one `(p, mu)` pair.
#[derive(Debug, Clone, Copy)]
struct ZeroGroup {
    mu: f64,
    count: f64,
    /// `ln((1 - p) / p)`
    log_odds: f64,
    /// `ln(p + (1 - p) e^{-mu})`, the null log-probability of a zero.
    null_log_zero: f64,
    p: f64,
}

impl ZeroGroup {
    fn posterior(&self, q: f64) -> f64 {
        1.0 / (1.0 + (self.log_odds - q * self.mu).exp())
    }

    fn nonstructural(&self, q: f64) -> f64 {
        let r = (self.log_odds - q * self.mu).exp();
        if r.is_infinite() {
            1.0
        } else {
            r / (1.0 + r)
        }
    }
}

/// Running sufficient statistics of a window. Zero cells with `p > 0` are
/// pooled by identical `(p, mu)`, so constant baselines cost O(1) per EM step.
#[derive(Debug, Default)]
pub(crate) struct WindowSums {
    sum_y: u64,
    /// Means of all cells, in insertion order.
    sum_mu: f64,
    /// Means of cells that can never be structural zeros.
    sum_mu_free: f64,
    groups: Vec<ZeroGroup>,
    index: HashMap<(u64, u64), usize>,
}

impl WindowSums {
    pub(crate) fn clear(&mut self) {
        self.sum_y = 0;
        self.sum_mu = 0.0;
        self.sum_mu_free = 0.0;
        self.groups.clear();
        self.index.clear();
    }

    /// Group index of the cell if it joined a zero group.
    pub(crate) fn add(&mut self, y: u32, params: ZipParams) -> Option<usize> {
        let (p, mu) = (params.p(), params.mu());
        self.sum_y += u64::from(y);
        self.sum_mu += mu;
        if y > 0 || p == 0.0 {
            self.sum_mu_free += mu;
            return None;
        }
        if let Some(last) = self.groups.len().checked_sub(1) {
            let g = &mut self.groups[last];
            if g.p == p && g.mu == mu {
                g.count += 1.0;
                return Some(last);
            }
        }
        let key = (p.to_bits(), mu.to_bits());
        if let Some(&idx) = self.index.get(&key) {
            self.groups[idx].count += 1.0;
            return Some(idx);
        }
        let idx = self.groups.len();
        self.groups.push(ZeroGroup {
            mu,
            count: 1.0,
            log_odds: (-p).ln_1p() - p.ln(),
            null_log_zero: log_zero_prob(p, mu),
            p,
        });
        self.index.insert(key, idx);
        Some(idx)
    }

    /// Poisson log-likelihood ratio `sum_y ln q - (q - 1) sum_mu`.
    fn poisson_lambda(&self, q: f64) -> f64 {
        self.sum_y as f64 * q.ln() - (q - 1.0) * self.sum_mu
    }

    /// ZIP log-likelihood ratio of relative risk `q` against `q = 1`.
    pub(crate) fn zip_lambda(&self, q: f64) -> f64 {
        let base = self.poisson_lambda(q);
        if self.groups.is_empty() {
            return base;
        }
        let correction: f64 = self
            .groups
            .iter()
            .map(|g| {
                let p_log_zero = log_zero_prob(g.p, q * g.mu);
                g.count * ((q - 1.0) * g.mu + p_log_zero - g.null_log_zero)
            })
            .sum();
        base + correction
    }

    fn m_step(&self, q_prev: f64) -> f64 {
        let pooled: f64 = self
            .groups
            .iter()
            .map(|g| g.count * g.mu * g.nonstructural(q_prev))
            .sum();
        let denom = self.sum_mu_free + pooled;
        (self.sum_y as f64 / denom).max(1.0)
    }

    /// EM for the window relative risk, starting from `q = 1`. `on_step`
    /// sees the log-likelihood ratio after every iterate, starting with 0 at
    /// the initial value.
    pub(crate) fn zip_em(&self, em: EmOptions, mut on_step: impl FnMut(f64)) -> (f64, usize, bool) {
        if self.sum_y == 0 {
            return (1.0, 0, true);
        }
        let mut q = 1.0;
        let mut ll = 0.0;
        on_step(ll);
        for iteration in 1..=em.max_iter {
            let q_next = self.m_step(q);
            let ll_next = if q_next == 1.0 { 0.0 } else { self.zip_lambda(q_next) };
            on_step(ll_next);
            let rel = (ll_next - ll).exp_m1().abs();
            q = q_next;
            ll = ll_next;
            if rel < em.tol {
                return (q, iteration, true);
            }
        }
        (q, em.max_iter, false)
    }

    pub(crate) fn score_zip(&self, window: Window, em: EmOptions) -> WindowScore {
        let (q_hat, em_iterations, converged) = self.zip_em(em, |_| {});
        let lambda = if q_hat == 1.0 { 0.0 } else { self.zip_lambda(q_hat) };
        WindowScore {
            window,
            q_hat,
            lambda,
            em_iterations,
            converged,
        }
    }

    pub(crate) fn score_poisson(&self, window: Window) -> WindowScore {
        let q_hat = if self.sum_y == 0 {
            1.0
        } else {
            (self.sum_y as f64 / self.sum_mu).max(1.0)
        };
        let lambda = if q_hat > 1.0 { self.poisson_lambda(q_hat) } else { 0.0 };
        WindowScore {
            window,
            q_hat,
            lambda,
            em_iterations: 0,
            converged: true,
        }
    }

    fn from_cells(cells: &[Cell]) -> (Self, Vec<Option<usize>>) {
        let mut sums = Self::default();
        let membership = cells.iter().map(|c| sums.add(c.y, c.params)).collect();
        (sums, membership)
    }
}

fn check_cells(cells: &[Cell]) -> Result<()> {
    if cells.is_empty() {
        Err(Error::Domain("window has no cells".into()))
    } else {
        Ok(())
    }
}

/// Relative-risk estimate for one window by EM.
pub fn zip_em_qhat(cells: &[Cell], em: EmOptions) -> Result<EmEstimate> {
    zip_em_qhat_traced(cells, em, |_| {})
}

/// [`zip_em_qhat`], reporting the incomplete-data log-likelihood (relative to
/// the null) after every iterate.
pub fn zip_em_qhat_traced(cells: &[Cell], em: EmOptions, on_step: impl FnMut(f64)) -> Result<EmEstimate> {
    check_cells(cells)?;
    let (sums, membership) = WindowSums::from_cells(cells);
    let (q_hat, iterations, converged) = sums.zip_em(em, on_step);
    let deltas = membership
        .iter()
        .map(|m| m.map_or(0.0, |g| sums.groups[g].posterior(q_hat)))
        .collect();
    Ok(EmEstimate {
        q_hat,
        deltas,
        iterations,
        converged,
    })
}

/// Log-likelihood ratio of the window at relative risk `q_hat`. Cells
/// outside the window cancel and are never needed.
pub fn zip_window_lambda(cells: &[Cell], q_hat: f64) -> Result<f64> {
    if !(q_hat >= 1.0 && q_hat.is_finite()) {
        return Err(Error::ParameterDomain(format!("q_hat={q_hat} must be finite and >= 1")));
    }
    if q_hat == 1.0 {
        return Ok(0.0);
    }
    let (sums, _) = WindowSums::from_cells(cells);
    Ok(sums.zip_lambda(q_hat))
}

/// EB-ZIP score of a window: EM estimate paired with its likelihood ratio.
pub fn zip_window_score(cells: &[Cell], em: EmOptions) -> Result<WindowScore> {
    check_cells(cells)?;
    let (sums, _) = WindowSums::from_cells(cells);
    Ok(sums.score_zip(Window { zone: 0, duration: 1 }, em))
}

/// Closed-form expectation-based Poisson score; `p` is ignored.
pub fn poisson_window_score(cells: &[Cell]) -> Result<WindowScore> {
    check_cells(cells)?;
    let mut sums = WindowSums::default();
    for c in cells {
        sums.sum_y += u64::from(c.y);
        sums.sum_mu += c.params.mu();
    }
    Ok(sums.score_poisson(Window { zone: 0, duration: 1 }))
}

/// Bounded best-first list of window scores.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    items: Vec<WindowScore>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, score: WindowScore) {
        if self.items.len() == self.k {
            let worst = self.items.last().expect("k >= 1");
            if score.rank_cmp(worst) != Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|s| s.rank_cmp(&score) == Ordering::Less);
        self.items.insert(pos, score);
    }

    fn merge(mut self, other: TopK) -> TopK {
        for s in other.items {
            self.offer(s);
        }
        self
    }
}

struct ScanPartial {
    top: TopK,
    windows: usize,
    non_converged: usize,
}

/// Scores every window `zone x (1..=max_duration)` and returns the maximum
/// with its most likely cluster and the `top_k` ranked windows.
///
/// Zones are scored in parallel; the result does not depend on the thread
/// count because ranking is a total order.
pub fn scan(
    counts: &CountGrid,
    baselines: &BaselineGrid,
    zones: &ZoneSet,
    options: &ScanOptions,
) -> Result<ScanResult> {
    baselines.check_aligned(counts)?;
    if zones.is_empty() {
        return Err(Error::Domain("zone set is empty".into()));
    }
    if let Some(max) = zones.max_location() {
        if max >= counts.n {
            return Err(Error::DimensionMismatch(format!(
                "zone references location {max} but grid has {} locations",
                counts.n
            )));
        }
    }
    if options.max_duration == 0 || options.max_duration > counts.t {
        return Err(Error::Domain(format!(
            "max_duration={} must be in 1..={}",
            options.max_duration, counts.t
        )));
    }
    if options.top_k == 0 {
        return Err(Error::Domain("top_k must be at least 1".into()));
    }

    let max_duration = options.max_duration;
    let partial = zones
        .zones()
        .par_iter()
        .enumerate()
        .fold(
            || {
                (
                    WindowSums::default(),
                    ScanPartial {
                        top: TopK::new(options.top_k),
                        windows: 0,
                        non_converged: 0,
                    },
                )
            },
            |(mut sums, mut acc), (zone_idx, zone)| {
                sums.clear();
                for duration in 1..=max_duration {
                    for &i in zone.members() {
                        sums.add(counts.get(i, duration), baselines.get(i, duration));
                    }
                    let window = Window {
                        zone: zone_idx,
                        duration,
                    };
                    let score = match options.statistic {
                        StatisticKind::EbZip => sums.score_zip(window, options.em),
                        StatisticKind::EbPoisson => sums.score_poisson(window),
                    };
                    acc.windows += 1;
                    if !score.converged {
                        acc.non_converged += 1;
                    }
                    acc.top.offer(score);
                }
                (sums, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(
            || ScanPartial {
                top: TopK::new(options.top_k),
                windows: 0,
                non_converged: 0,
            },
            |a, b| ScanPartial {
                top: a.top.merge(b.top),
                windows: a.windows + b.windows,
                non_converged: a.non_converged + b.non_converged,
            },
        );

    let ranked = partial.top.items;
    let mlc = ranked[0];
    Ok(ScanResult {
        statistic: options.statistic,
        lambda_star: mlc.lambda,
        mlc,
        ranked,
        windows_evaluated: partial.windows,
        non_converged: partial.non_converged,
    })
}

/// Cells of one window, in the order the scan accumulates them.
pub fn window_cells(counts: &CountGrid, baselines: &BaselineGrid, members: &[usize], duration: usize) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(members.len() * duration);
    for d in 1..=duration {
        for &i in members {
            cells.push(Cell::new(counts.get(i, d), baselines.get(i, d)));
        }
    }
    cells
}
