//! Corpus-level BLEU with one reference per hypothesis.
//!
//! Orders 1–4, clipped n-gram counts pooled over the corpus, geometric mean of
//! the four precisions and the exponential brevity penalty. A precision whose
//! clipped count is zero is smoothed to `1e-9 / total` so the logarithm stays
//! finite; the score is then effectively 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ORDER: usize = 4;
pub const ZERO_PRECISION_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BleuError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    /// 0–100.
    pub score: f64,
    pub n_gram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

/// Whitespace tokenization; input is expected to be pre-tokenized.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], order: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for w in tokens.windows(order) {
            let key: Vec<&str> = w.iter().map(|t| t.as_ref()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus sufficient statistics; additive across sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R]) -> Self {
        let mut s = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for order in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, order);
            let r = ngram_counts(reference, order);
            s.totals[order - 1] = hyp.len().saturating_sub(order - 1);
            s.matches[order - 1] = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn merge(mut self, other: BleuStats) -> BleuStats {
        for i in 0..MAX_ORDER {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }

    pub fn finish(&self) -> BleuResult {
        let mut precisions = [0.0; MAX_ORDER];
        let mut log_sum = 0.0;
        for ((p, &matches), &total) in precisions.iter_mut().zip(&self.matches).zip(&self.totals) {
            let total = total.max(1) as f64;
            *p = matches as f64 / total;
            let smoothed = if matches == 0 {
                ZERO_PRECISION_EPSILON / total
            } else {
                *p
            };
            log_sum += smoothed.ln();
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        BleuResult {
            score: 100.0 * brevity_penalty * (log_sum / MAX_ORDER as f64).exp(),
            n_gram_precisions: precisions,
            brevity_penalty,
            hypothesis_length: self.hyp_len,
            reference_length: self.ref_len,
        }
    }
}

pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<R>],
) -> Result<BleuResult, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() || hypotheses.iter().all(|h| h.is_empty()) {
        return Err(BleuError::EmptyCorpus);
    }
    let stats = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::sentence(h, r))
        .fold(BleuStats::default(), BleuStats::merge);
    Ok(stats.finish())
}
