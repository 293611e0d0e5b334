//! Label-leakage proxies: the binary indicator 𝟙[ŷ|ê], Platt calibration of raw
//! simulator scores, and even-width binning of calibrated leakage probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{PredictionRecord, RecordBatch, RecordError};

pub const MIN_BINS: usize = 2;
/// Largest bin count the sensitivity analysis is defined for; larger counts are
/// accepted with a warning.
pub const MAX_BINS: usize = 100;

const PLATT_MAX_ITER: usize = 200;
const PLATT_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeakageError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("platt fit needs equal-length inputs with at least 2 points (scores {scores}, labels {labels})")]
    BadFitInput { scores: usize, labels: usize },
    #[error("platt fit needs both label classes; all labels are {0}")]
    SingleClass(u8),
    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),
    #[error("n_bins must be at least {MIN_BINS}, got {0}")]
    TooFewBins(usize),
    #[error("probability {value} at position {index} is outside [0,1]")]
    ProbOutOfRange { index: usize, value: f64 },
    #[error("record `{0}` has neither sim_expl_only_prob nor sim_expl_only_score")]
    MissingProbability(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAssignment {
    pub example_id: String,
    pub k: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_index: Option<usize>,
}

/// k = 𝟙[ŷ|ê]; `true` means the explanation leaks the output.
pub fn binary_leakage(record: &PredictionRecord) -> Result<bool, LeakageError> {
    Ok(record.expl_only_correct()?)
}

/// Binary leakage assignments for a whole batch, in record order.
pub fn binary_assignments(batch: &RecordBatch) -> Result<Vec<LeakageAssignment>, LeakageError> {
    batch
        .records
        .iter()
        .map(|r| {
            Ok(LeakageAssignment {
                example_id: r.example_id.clone(),
                k: binary_leakage(r)?,
                leak_prob: None,
                bin_index: None,
            })
        })
        .collect()
}

/// Assignments carrying calibrated probabilities and their bin at `n_bins`.
pub fn continuous_assignments(
    batch: &RecordBatch,
    leak_probs: &[f64],
    n_bins: usize,
) -> Result<Vec<LeakageAssignment>, LeakageError> {
    let bins = assign_bins(leak_probs, n_bins)?;
    batch
        .records
        .iter()
        .zip(leak_probs.iter().zip(bins))
        .map(|(r, (&p, b))| {
            Ok(LeakageAssignment {
                example_id: r.example_id.clone(),
                k: binary_leakage(r)?,
                leak_prob: Some(p),
                bin_index: Some(b),
            })
        })
        .collect()
}

/// Logistic map σ(a·s + b) from a raw score to a calibrated probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maximum-likelihood fit of σ(a·s + b) to binary labels by damped Newton steps.
///
/// Stops when the gradient norm drops below 1e-8 or after 200 iterations. On
/// perfectly separated data the likelihood has no finite maximiser; the fit then
/// returns the last iterate, which is still monotone in the score.
pub fn platt_fit(scores: &[f64], labels: &[bool]) -> Result<PlattParams, LeakageError> {
    if scores.len() != labels.len() || scores.len() < 2 {
        return Err(LeakageError::BadFitInput {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(LeakageError::NonFiniteScore(i));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 {
        return Err(LeakageError::SingleClass(0));
    }
    if n0 == 0 {
        return Err(LeakageError::SingleClass(1));
    }

    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| {
                let z = a * s + b;
                // -log σ(z) for y=1, -log(1-σ(z)) = -log σ(-z) for y=0
                let m = if y { -z } else { z };
                softplus(m)
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = (n1 as f64 / n0 as f64).ln();
    let mut f = nll(a, b);
    for _ in 0..PLATT_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            let p = sigmoid(a * s + b);
            let r = p - if y { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if ga.hypot(gb) < PLATT_GRAD_TOL {
            break;
        }
        // Small ridge keeps the system solvable when scores are (nearly) constant.
        let ridge = 1e-12 * (1.0 + haa + hbb);
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > f64::MIN_POSITIVE {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf <= f + 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(PlattParams { a, b })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bin index of each probability over `n_bins` half-open bins `[i/n, (i+1)/n)`,
/// with the last bin closed on the right.
pub fn assign_bins(leak_probs: &[f64], n_bins: usize) -> Result<Vec<usize>, LeakageError> {
    if n_bins < MIN_BINS {
        return Err(LeakageError::TooFewBins(n_bins));
    }
    if n_bins > MAX_BINS {
        log::warn!("n_bins = {n_bins} exceeds {MAX_BINS}; bins will be sparsely populated");
    }
    leak_probs
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            if (0.0..=1.0).contains(&p) {
                Ok(bin_of(p, n_bins))
            } else {
                Err(LeakageError::ProbOutOfRange { index, value: p })
            }
        })
        .collect()
}

fn bin_of(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Where continuous leakage probabilities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    /// Platt-fit the raw score (or the logit of the raw probability when no score
    /// is present) against 𝟙[ŷ|ê].
    #[default]
    Platt,
    /// Use `sim_expl_only_prob` as given.
    None,
}

/// Raw per-record score used for Platt fitting: `sim_expl_only_score` when present,
/// otherwise the logit of p(ŷ|ê) clamped away from 0 and 1.
pub fn raw_score(record: &PredictionRecord) -> Result<f64, LeakageError> {
    if let Some(s) = record.sim_expl_only_score {
        return Ok(s);
    }
    match record.expl_only_prob() {
        Some(p) => Ok(logit(p.clamp(1e-12, 1.0 - 1e-12))),
        None => Err(LeakageError::MissingProbability(record.example_id.clone())),
    }
}

/// Fits Platt parameters on `fit_set` (scores vs 𝟙[ŷ|ê]).
pub fn fit_on(fit_set: &RecordBatch) -> Result<PlattParams, LeakageError> {
    let scores = fit_set
        .records
        .iter()
        .map(raw_score)
        .collect::<Result<Vec<_>, _>>()?;
    let labels = fit_set
        .records
        .iter()
        .map(binary_leakage)
        .collect::<Result<Vec<_>, _>>()?;
    platt_fit(&scores, &labels)
}

/// Calibrated p(ŷ|ê) per record of `batch`.
pub fn calibrated_probs(
    batch: &RecordBatch,
    params: &PlattParams,
) -> Result<Vec<f64>, LeakageError> {
    batch
        .records
        .iter()
        .map(|r| raw_score(r).map(|s| params.apply(s)))
        .collect()
}

/// p(ŷ|ê) as stored on each record, uncalibrated.
pub fn stored_probs(batch: &RecordBatch) -> Result<Vec<f64>, LeakageError> {
    batch
        .records
        .iter()
        .map(|r| {
            r.expl_only_prob()
                .ok_or_else(|| LeakageError::MissingProbability(r.example_id.clone()))
        })
        .collect()
}
