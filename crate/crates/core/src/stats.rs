//! Inferential statistics: percentile bootstrap, Spearman correlation with tied
//! ranks, contingency tables, simple OLS, the pooled two-proportion z-test, Wald
//! intervals, pragmatic drift and multi-seed aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::las::{LasAccumulator, LasItem};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Redraw budget for a single bootstrap iteration before giving up.
const MAX_REDRAWS_PER_ITERATION: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("{0} is constant; statistic undefined")]
    Constant(&'static str),
    #[error("level must be in (0,1), got {0}")]
    BadLevel(f64),
    #[error("statistic undefined on the full sample")]
    UndefinedPoint,
    #[error("statistic undefined on {undefined} of {draws} resamples (more than half)")]
    MostlyUndefined { undefined: usize, draws: usize },
    #[error("proportion {0} outside [0,1]")]
    BadProportion(f64),
    #[error("count {k} exceeds trials {n}")]
    BadCount { k: u64, n: u64 },
    #[error("trials must be positive")]
    ZeroTrials,
    #[error("value {value} not among the {axis} labels")]
    UnknownLabel { axis: &'static str, value: i64 },
    #[error("row `{0}` has zero total")]
    ZeroRow(i64),
    #[error("table dimensions do not match labels")]
    Shape,
}

// ---------------------------------------------------------------- bootstrap

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Statistic on the full sample.
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Resamples discarded because the statistic was undefined on them.
    pub redraws: usize,
}

impl BootstrapResult {
    pub fn halfwidth(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    pub fn scaled(&self, factor: f64) -> BootstrapResult {
        BootstrapResult {
            point: self.point * factor,
            lo: self.lo * factor,
            hi: self.hi * factor,
            ..*self
        }
    }
}

/// Independent generator for bootstrap iteration `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap interval of `statistic` over `items` resampled with
/// replacement.
///
/// `statistic` returns `None` when undefined on a resample; such resamples are
/// redrawn from the same iteration's stream. Each iteration draws from
/// [`substream`]`(seed, i)`, so the result does not depend on the size of the
/// rayon pool it runs in.
pub fn bootstrap_ci<T, F>(
    items: &[T],
    statistic: F,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult, StatsError>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    if items.is_empty() {
        return Err(StatsError::Empty);
    }
    if cfg.iterations == 0 {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(StatsError::BadLevel(cfg.level));
    }
    let full: Vec<&T> = items.iter().collect();
    let point = statistic(&full).ok_or(StatsError::UndefinedPoint)?;
    let n = items.len();

    let draws: Vec<(Option<f64>, usize)> = (0..cfg.iterations)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf: &mut Vec<&T>, i| {
                let mut rng = substream(cfg.seed, i as u64);
                let mut redraws = 0;
                loop {
                    buf.clear();
                    buf.extend((0..n).map(|_| &items[rng.random_range(0..n)]));
                    if let Some(v) = statistic(buf) {
                        return (Some(v), redraws);
                    }
                    redraws += 1;
                    if redraws > MAX_REDRAWS_PER_ITERATION {
                        return (None, redraws);
                    }
                }
            },
        )
        .collect();

    let redraws: usize = draws.iter().map(|d| d.1).sum();
    let total = cfg.iterations + redraws;
    if redraws * 2 > total || draws.iter().any(|d| d.0.is_none()) {
        return Err(StatsError::MostlyUndefined {
            undefined: redraws,
            draws: total,
        });
    }
    if redraws > 0 {
        log::info!("bootstrap redrew {redraws} undefined resamples");
    }
    let mut values: Vec<f64> = draws.into_iter().filter_map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.level;
    Ok(BootstrapResult {
        point,
        lo: quantile_sorted(&values, alpha / 2.0),
        hi: quantile_sorted(&values, 1.0 - alpha / 2.0),
        level: cfg.level,
        iterations: cfg.iterations,
        seed: cfg.seed,
        redraws,
    })
}

/// Bootstrap interval for two-group LAS (unit scale). Resamples whole examples,
/// each keeping its leakage group.
pub fn bootstrap_las(items: &[LasItem], cfg: &BootstrapConfig) -> Result<BootstrapResult, StatsError> {
    bootstrap_ci(
        items,
        |sample| {
            sample
                .iter()
                .copied()
                .collect::<LasAccumulator>()
                .finish()
                .ok()
                .map(|r| r.las)
        },
        cfg,
    )
}

// ---------------------------------------------------------------- correlation

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom, computed from
/// the regularized incomplete beta so that tiny tails keep their precision.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t.is_nan() {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's ρ (Pearson correlation of average ranks) with a t-approximation
/// p-value on n − 2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: xs.len(),
        });
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let rho = pearson(&rx, &ry).ok_or_else(|| {
        if rx.windows(2).all(|w| w[0] == w[1]) {
            StatsError::Constant("xs")
        } else {
            StatsError::Constant("ys")
        }
    })?;
    let df = (xs.len() - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        t_two_sided_p(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(Correlation {
        rho,
        p_value,
        n: xs.len(),
    })
}

/// Formats a p-value, printing an upper bound when it underflows.
pub fn format_p(p: f64) -> String {
    if p < 1e-300 {
        "< 1e-300".to_string()
    } else if p < 1e-4 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

// ---------------------------------------------------------------- contingency

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<i64>,
    pub col_labels: Vec<i64>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn from_counts(
        row_labels: Vec<i64>,
        col_labels: Vec<i64>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self, StatsError> {
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != col_labels.len()) {
            return Err(StatsError::Shape);
        }
        let t = Self {
            row_labels,
            col_labels,
            counts,
        };
        if t.total() == 0 {
            return Err(StatsError::Empty);
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Paired observations reproducing the table, row-major.
    pub fn expand(&self) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(self.total() as usize);
        let mut ys = Vec::with_capacity(self.total() as usize);
        for (r, row) in self.row_labels.iter().zip(&self.counts) {
            for (c, &k) in self.col_labels.iter().zip(row) {
                for _ in 0..k {
                    xs.push(*r as f64);
                    ys.push(*c as f64);
                }
            }
        }
        (xs, ys)
    }

    pub fn spearman(&self) -> Result<Correlation, StatsError> {
        let (xs, ys) = self.expand();
        spearman(&xs, &ys)
    }

    /// Each row divided by its total.
    pub fn row_normalize(&self) -> Result<Vec<Vec<f64>>, StatsError> {
        self.row_labels
            .iter()
            .zip(&self.counts)
            .map(|(label, row)| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    return Err(StatsError::ZeroRow(*label));
                }
                Ok(row.iter().map(|&c| c as f64 / total as f64).collect())
            })
            .collect()
    }
}

/// Cross-tabulates paired ordinal observations over the given label sets.
pub fn contingency(
    xs: &[i64],
    ys: &[i64],
    row_labels: &[i64],
    col_labels: &[i64],
) -> Result<ContingencyTable, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (&x, &y) in xs.iter().zip(ys) {
        let r = row_labels
            .iter()
            .position(|&l| l == x)
            .ok_or(StatsError::UnknownLabel { axis: "row", value: x })?;
        let c = col_labels
            .iter()
            .position(|&l| l == y)
            .ok_or(StatsError::UnknownLabel {
                axis: "column",
                value: y,
            })?;
        counts[r][c] += 1;
    }
    ContingencyTable::from_counts(row_labels.to_vec(), col_labels.to_vec(), counts)
}

// ---------------------------------------------------------------- regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub beta: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Least-squares fit of `y = intercept + beta·x` with a two-sided t-test of β = 0.
pub fn ols_simple(y: &[f64], x: &[f64]) -> Result<RegressionResult, StatsError> {
    if y.len() != x.len() {
        return Err(StatsError::LengthMismatch(y.len(), x.len()));
    }
    let n = y.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Constant("x"));
    }
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if syy == 0.0 {
        return Err(StatsError::Constant("y"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - beta * a).powi(2))
        .sum();
    let df = nf - 2.0;
    let std_error = (sse / df / sxx).sqrt();
    let p_value = if std_error == 0.0 {
        0.0
    } else {
        t_two_sided_p(beta / std_error, df)
    };
    Ok(RegressionResult {
        beta,
        intercept,
        std_error,
        p_value,
        n,
    })
}

/// Mean with a Student-t confidence halfwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub halfwidth: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64], level: f64) -> Result<MeanCi, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("df > 0")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok(MeanCi {
        mean,
        halfwidth: t * (var / nf).sqrt(),
        n,
    })
}

// ---------------------------------------------------------------- proportions

fn check_prop(p: f64) -> Result<(), StatsError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(StatsError::BadProportion(p))
    }
}

/// Two-sided p-value of the pooled-variance two-proportion z-test, from observed
/// proportions.
pub fn two_proportion_z_test(p1: f64, n1: u64, p2: f64, n2: u64) -> Result<f64, StatsError> {
    check_prop(p1)?;
    check_prop(p2)?;
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::ZeroTrials);
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if p1 == p2 {
        return Ok(1.0);
    }
    if var <= 0.0 {
        return Ok(0.0);
    }
    let z = (p1 - p2) / var.sqrt();
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
}

/// Difference-in-binomial-means test on success counts.
pub fn binomial_diff_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<f64, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::ZeroTrials);
    }
    if k1 > n1 {
        return Err(StatsError::BadCount { k: k1, n: n1 });
    }
    if k2 > n2 {
        return Err(StatsError::BadCount { k: k2, n: n2 });
    }
    two_proportion_z_test(k1 as f64 / n1 as f64, n1, k2 as f64 / n2 as f64, n2)
}

/// Two-sided standard normal critical value for `level`.
pub fn z_critical(level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub halfwidth: f64,
    /// p̂ is 0 or 1, so the interval collapses to a point.
    pub zero_variance: bool,
}

/// Wald halfwidth z·√(p̂(1−p̂)/n), unit scale.
pub fn wald_ci(p_hat: f64, n: u64, level: f64) -> Result<WaldInterval, StatsError> {
    check_prop(p_hat)?;
    if n == 0 {
        return Err(StatsError::ZeroTrials);
    }
    let z = z_critical(level)?;
    let zero_variance = p_hat == 0.0 || p_hat == 1.0;
    if zero_variance {
        log::warn!("wald interval at p_hat = {p_hat} has zero variance");
    }
    Ok(WaldInterval {
        halfwidth: z * (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
        zero_variance,
    })
}

/// |acc_a − acc_b| in percentage points.
pub fn pragmatic_drift(acc_a: f64, acc_b: f64) -> f64 {
    (acc_a - acc_b).abs() * 100.0
}

// ---------------------------------------------------------------- seeds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub source: String,
    pub seed_tag: String,
    pub las: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub source: String,
    /// `(seed_tag, las)` sorted by seed tag.
    pub values: Vec<(String, f64)>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

/// Groups per-seed LAS values by source. Rows keep first-appearance order of
/// sources; use [`sort_by_mean`] for a ranking.
pub fn aggregate_seeds(reports: &[SeedReport]) -> Vec<SeedRow> {
    let mut rows: Vec<SeedRow> = Vec::new();
    for r in reports {
        let entry = (r.seed_tag.clone(), r.las);
        match rows.iter_mut().find(|row| row.source == r.source) {
            Some(row) => row.values.push(entry),
            None => rows.push(SeedRow {
                source: r.source.clone(),
                values: vec![entry],
                mean: 0.0,
                min: 0.0,
                max: 0.0,
                range: 0.0,
            }),
        }
    }
    for row in &mut rows {
        row.values
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let vals: Vec<f64> = row.values.iter().map(|v| v.1).collect();
        row.min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        row.max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.range = row.max - row.min;
        row.mean = vals.iter().sum::<f64>() / vals.len() as f64;
    }
    rows
}

/// Stable descending sort by mean LAS.
pub fn sort_by_mean(rows: &mut [SeedRow]) {
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean));
}
