//! Synthetic prediction records with analytically known LAS.
//!
//! In a [`SyntheticScenario`] each example leaks with probability `p_leak`; given
//! its leakage group, 𝟙[ŷ|x] and 𝟙[ŷ|x,ê] are independent Bernoulli draws. The
//! two-group estimator is then unbiased for [`analytic_las`].
//!
//! A [`LinearLeakageScenario`] instead draws a calibrated leakage probability
//! q ~ U(0,1) per example and makes the expected explanation effect linear in q,
//! which is the setting where binned LAS should not depend on the bin count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::las::LasError;
use crate::leakage::{logit, LeakageAssignment};
use crate::records::{PredictionRecord, RecordBatch};
use crate::stats::ContingencyTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{name} = {value} is outside [0,1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("n must be at least 1")]
    Empty,
    #[error("p_leak = {0} leaves one leakage group empty; LAS is undefined")]
    DegenerateLeak(f64),
    #[error("leak_prob_noise must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("{0}")]
    Table(String),
}

const CHOICES: [&str; 3] = ["A", "B", "C"];
/// Largest distance of a noisy leakage probability from its binary value; keeps
/// nonleaking probabilities below 0.5 and leaking ones at or above it.
const MAX_NOISE_DISTANCE: f64 = 0.49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub n: usize,
    pub p_leak: f64,
    pub p_base: f64,
    pub p_full_given_leak: f64,
    pub p_full_given_nonleak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_prob_noise: Option<f64>,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n == 0 {
            return Err(SynthError::Empty);
        }
        for (name, value) in [
            ("p_leak", self.p_leak),
            ("p_base", self.p_base),
            ("p_full_given_leak", self.p_full_given_leak),
            ("p_full_given_nonleak", self.p_full_given_nonleak),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::BadProbability { name, value });
            }
        }
        if let Some(s) = self.leak_prob_noise {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SynthError::BadNoise(s));
            }
        }
        Ok(())
    }

    /// Scenario used throughout the test suite: a 0.4 lift when leaking, 0.2 when
    /// not, 85% leakage.
    pub fn reference(n: usize, seed: u64) -> Self {
        Self {
            n,
            p_leak: 0.85,
            p_base: 0.5,
            p_full_given_leak: 0.9,
            p_full_given_nonleak: 0.7,
            leak_prob_noise: Some(0.15),
            seed,
        }
    }
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn base_record(index: usize, seed: u64, source: &str, dataset: &str, rng: &mut ChaCha8Rng) -> PredictionRecord {
    let mut r = PredictionRecord::new(
        format!("syn-{index:07}"),
        source,
        dataset,
        CHOICES.iter().map(|c| c.to_string()).collect(),
        rng.random_range(0..CHOICES.len()),
    );
    r.seed_tag = Some(seed.to_string());
    r
}

/// ½[(p_full_given_leak − p_base) + (p_full_given_nonleak − p_base)]
pub fn analytic_las(scenario: &SyntheticScenario) -> Result<f64, SynthError> {
    scenario.validate()?;
    if scenario.p_leak == 0.0 || scenario.p_leak == 1.0 {
        return Err(SynthError::DegenerateLeak(scenario.p_leak));
    }
    Ok(0.5
        * ((scenario.p_full_given_leak - scenario.p_base)
            + (scenario.p_full_given_nonleak - scenario.p_base)))
}

/// Approximate standard error of the two-group estimator at the expected group
/// sizes n·p_leak and n·(1 − p_leak).
pub fn analytic_standard_error(scenario: &SyntheticScenario) -> Result<f64, SynthError> {
    analytic_las(scenario)?;
    let var = |pf: f64| pf * (1.0 - pf) + scenario.p_base * (1.0 - scenario.p_base);
    let n = scenario.n as f64;
    let n1 = n * scenario.p_leak;
    let n0 = n * (1.0 - scenario.p_leak);
    Ok(0.5 * (var(scenario.p_full_given_leak) / n1 + var(scenario.p_full_given_nonleak) / n0).sqrt())
}

/// Draws `scenario.n` records. Example i uses its own stream of the scenario seed,
/// so output is identical at any parallelism.
pub fn generate(scenario: &SyntheticScenario) -> Result<RecordBatch, SynthError> {
    scenario.validate()?;
    let noise = scenario
        .leak_prob_noise
        .map(|s| Normal::new(0.0, s).expect("validated noise"));
    let records = (0..scenario.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = example_rng(scenario.seed, i);
            let mut r = base_record(i, scenario.seed, "synthetic", "SYN", &mut rng);
            let leaking = rng.random_bool(scenario.p_leak);
            let input = rng.random_bool(scenario.p_base);
            let p_full = if leaking {
                scenario.p_full_given_leak
            } else {
                scenario.p_full_given_nonleak
            };
            let full = rng.random_bool(p_full);
            r = r.with_indicators(full, input, leaking);
            if let Some(dist) = &noise {
                let d = dist.sample(&mut rng).abs().min(MAX_NOISE_DISTANCE);
                let p = if leaking { 1.0 - d } else { d };
                r.sim_expl_only_prob = Some(p);
                r.sim_expl_only_score = Some(logit(p.clamp(1e-9, 1.0 - 1e-9)));
            }
            r
        })
        .collect();
    Ok(RecordBatch::new(records, format!("synthetic(seed={})", scenario.seed)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLeakageScenario {
    pub n: usize,
    pub p_base: f64,
    /// Expected example-level effect at leakage probability 0.
    pub effect_at_zero: f64,
    /// Expected example-level effect at leakage probability 1.
    pub effect_at_one: f64,
    /// Multiplier applied to logit(q) to form the raw, uncalibrated score.
    pub score_scale: f64,
    pub seed: u64,
}

impl LinearLeakageScenario {
    pub fn reference(n: usize, seed: u64) -> Self {
        Self {
            n,
            p_base: 0.4,
            effect_at_zero: 0.05,
            effect_at_one: 0.35,
            score_scale: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n == 0 {
            return Err(SynthError::Empty);
        }
        for (name, value) in [
            ("p_base", self.p_base),
            ("p_base + effect_at_zero", self.p_base + self.effect_at_zero),
            ("p_base + effect_at_one", self.p_base + self.effect_at_one),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::BadProbability { name, value });
            }
        }
        Ok(())
    }

    /// Expected effect averaged uniformly over q, which is also the limit of the
    /// binned estimator for every bin count.
    pub fn analytic_las(&self) -> f64 {
        0.5 * (self.effect_at_zero + self.effect_at_one)
    }
}

/// Records whose leakage indicator is Bernoulli(q) for a calibrated q ~ U(0,1).
/// `sim_expl_only_prob` carries q; `sim_expl_only_score` carries a rescaled logit.
pub fn generate_linear(scenario: &LinearLeakageScenario) -> Result<RecordBatch, SynthError> {
    scenario.validate()?;
    let slope = scenario.effect_at_one - scenario.effect_at_zero;
    let records = (0..scenario.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = example_rng(scenario.seed, i);
            let mut r = base_record(i, scenario.seed, "synthetic-linear", "SYN", &mut rng);
            let q: f64 = rng.random();
            let leaking = rng.random_bool(q);
            let input = rng.random_bool(scenario.p_base);
            let p_full = (scenario.p_base + scenario.effect_at_zero + slope * q).clamp(0.0, 1.0);
            let full = rng.random_bool(p_full);
            r = r.with_indicators(full, input, leaking);
            r.sim_expl_only_prob = Some(q);
            r.sim_expl_only_score = Some(scenario.score_scale * logit(q.clamp(1e-9, 1.0 - 1e-9)));
            r
        })
        .collect();
    Ok(RecordBatch::new(
        records,
        format!("synthetic-linear(seed={})", scenario.seed),
    ))
}

/// Deliberately naive LAS: builds both groups as explicit lists of effects and
/// averages each left to right in record order.
pub fn brute_force_las(
    batch: &RecordBatch,
    leakage: &[LeakageAssignment],
) -> Result<f64, LasError> {
    if batch.records.is_empty() {
        return Err(LasError::EmptyBatch);
    }
    if batch.records.len() != leakage.len() {
        return Err(LasError::CoverageMismatch {
            records: batch.records.len(),
            assignments: leakage.len(),
        });
    }
    let mut nonleaking: Vec<f64> = Vec::new();
    let mut leaking: Vec<f64> = Vec::new();
    for (index, (r, a)) in batch.records.iter().zip(leakage).enumerate() {
        if r.example_id != a.example_id {
            return Err(LasError::IdMismatch {
                index,
                expected: r.example_id.clone(),
                found: a.example_id.clone(),
            });
        }
        let full = if r.full_correct()? { 1.0 } else { 0.0 };
        let input = if r.input_only_correct()? { 1.0 } else { 0.0 };
        if a.k {
            leaking.push(full - input);
        } else {
            nonleaking.push(full - input);
        }
    }
    let mean = |xs: &[f64]| {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s / xs.len() as f64
    };
    if nonleaking.is_empty() || leaking.is_empty() {
        let empty_leaking = leaking.is_empty();
        let other = if empty_leaking { &nonleaking } else { &leaking };
        return Err(LasError::EmptyGroup {
            empty_leaking,
            other_value: mean(other),
            other_n: other.len() as u64,
        });
    }
    Ok((mean(&nonleaking) + mean(&leaking)) / 2.0)
}

/// Human simulator indicators stored as extra record fields by the expert
/// agreement workflow.
pub const HUMAN_FULL_FIELD: &str = "human_sim_full_correct";
pub const HUMAN_INPUT_ONLY_FIELD: &str = "human_sim_input_only_correct";
pub const HUMAN_EXPL_ONLY_FIELD: &str = "human_sim_expl_only_correct";

fn indicators_for_effect(effect: i64) -> Result<(bool, bool), SynthError> {
    match effect {
        -1 => Ok((false, true)),
        0 => Ok((true, true)),
        1 => Ok((true, false)),
        other => Err(SynthError::Table(format!("example-level LAS label {other} not in {{-1,0,1}}"))),
    }
}

/// Builds records whose model-vs-human leakage and model-vs-human example LAS
/// cross-tabulate exactly to the two given tables (rows: model, columns: human).
/// Both tables must have the same total.
pub fn agreement_fixture(
    leakage: &ContingencyTable,
    las: &ContingencyTable,
    source: &str,
    dataset: &str,
) -> Result<RecordBatch, SynthError> {
    if leakage.total() != las.total() {
        return Err(SynthError::Table(format!(
            "table totals differ: {} vs {}",
            leakage.total(),
            las.total()
        )));
    }
    let (model_k, human_k) = leakage.expand();
    let (model_e, human_e) = las.expand();
    let mut records = Vec::with_capacity(model_k.len());
    for i in 0..model_k.len() {
        let (mf, mi) = indicators_for_effect(model_e[i] as i64)?;
        let (hf, hi) = indicators_for_effect(human_e[i] as i64)?;
        let mut r = PredictionRecord::new(
            format!("agree-{i:04}"),
            source,
            dataset,
            CHOICES.iter().map(|c| c.to_string()).collect(),
            0,
        )
        .with_indicators(mf, mi, model_k[i] != 0.0);
        r.extra.insert(HUMAN_FULL_FIELD.into(), Value::from(u8::from(hf)));
        r.extra.insert(HUMAN_INPUT_ONLY_FIELD.into(), Value::from(u8::from(hi)));
        r.extra.insert(
            HUMAN_EXPL_ONLY_FIELD.into(),
            Value::from(u8::from(human_k[i] != 0.0)),
        );
        records.push(r);
    }
    Ok(RecordBatch::new(records, "agreement-fixture"))
}
