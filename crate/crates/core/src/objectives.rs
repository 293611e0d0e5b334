//! Scalar math of the explanation training objectives. Everything here works on
//! probabilities and losses supplied by the caller; no model is involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::argmax;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("likelihood at position {index} is not positive: {value}")]
    NonPositive { index: usize, value: f64 },
    #[error("empty input")]
    Empty,
    #[error("mixing weight {0} outside [0,1]")]
    AlphaOutOfRange(f64),
    #[error("probability {value} at position {index} outside {range}")]
    BadProbability {
        index: usize,
        value: f64,
        range: &'static str,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("log-likelihood at position {index} is positive: {value}")]
    PositiveLogLik { index: usize, value: f64 },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn check_alpha(alpha: f64) -> Result<(), ObjectiveError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ObjectiveError::AlphaOutOfRange(alpha))
    }
}

/// p(aᵢ|sᵢ) for each answer choice, where sᵢ is the explanation-augmented
/// sequence for choice i.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceLikelihoods(Vec<f64>);

impl ChoiceLikelihoods {
    pub fn new(values: Vec<f64>) -> Result<Self, ObjectiveError> {
        if values.is_empty() {
            return Err(ObjectiveError::Empty);
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(ObjectiveError::NonPositive { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// p(aᵢ|A,S) = p(aᵢ|sᵢ) / Σⱼ p(aⱼ|sⱼ)
pub fn st_ra_renormalize(likelihoods: &ChoiceLikelihoods) -> Vec<f64> {
    let total: f64 = likelihoods.0.iter().sum();
    likelihoods.0.iter().map(|v| v / total).collect()
}

/// α·L_task + (1−α)·L_LM
pub fn mt_mixed_loss(l_task: f64, l_lm: f64, alpha: f64) -> Result<f64, ObjectiveError> {
    check_alpha(alpha)?;
    Ok(alpha * l_task + (1.0 - alpha) * l_lm)
}

fn check_probs(ps: &[f64], open_zero: bool) -> Result<(), ObjectiveError> {
    for (index, &value) in ps.iter().enumerate() {
        let ok = if open_zero {
            value > 0.0 && value <= 1.0
        } else {
            (0.0..=1.0).contains(&value)
        };
        if !ok {
            return Err(ObjectiveError::BadProbability {
                index,
                value,
                range: if open_zero { "(0,1]" } else { "[0,1]" },
            });
        }
    }
    Ok(())
}

/// Simulatability loss for explanations:
/// −(1/N) Σᵢ (α·log p(ŷᵢ|xᵢ,êᵢ) − (1−α)·log p(ŷᵢ|êᵢ)).
///
/// Zero probabilities are rejected; callers pick their own clamping epsilon.
pub fn sgd_expl_loss(p_full: &[f64], p_eonly: &[f64], alpha: f64) -> Result<f64, ObjectiveError> {
    check_alpha(alpha)?;
    if p_full.len() != p_eonly.len() {
        return Err(ObjectiveError::LengthMismatch(p_full.len(), p_eonly.len()));
    }
    if p_full.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    check_probs(p_full, true)?;
    check_probs(p_eonly, true)?;
    let sum: f64 = p_full
        .iter()
        .zip(p_eonly)
        .map(|(f, e)| alpha * f.ln() - (1.0 - alpha) * e.ln())
        .sum();
    Ok(-sum / p_full.len() as f64)
}

/// rᵢ = α·p(ŷᵢ|xᵢ,êᵢ) − (1−α)·p(ŷᵢ|êᵢ), in [−(1−α), α].
pub fn reinforce_reward(p_full: f64, p_eonly: f64, alpha: f64) -> Result<f64, ObjectiveError> {
    check_alpha(alpha)?;
    check_probs(&[p_full, p_eonly], false)?;
    Ok(alpha * p_full - (1.0 - alpha) * p_eonly)
}

/// (1/N) Σᵢ −rᵢ·log p(êᵢ|xᵢ,ŷᵢ). No baseline or reward normalization.
pub fn reinforce_loss(rewards: &[f64], expl_logliks: &[f64]) -> Result<f64, ObjectiveError> {
    if rewards.len() != expl_logliks.len() {
        return Err(ObjectiveError::LengthMismatch(rewards.len(), expl_logliks.len()));
    }
    if rewards.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    for (index, &value) in expl_logliks.iter().enumerate() {
        if value > 0.0 {
            return Err(ObjectiveError::PositiveLogLik { index, value });
        }
    }
    let sum: f64 = rewards.iter().zip(expl_logliks).map(|(r, l)| -r * l).sum();
    Ok(sum / rewards.len() as f64)
}

/// Weights (λ1, λ2, λ3) on task, LM and explanation losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLossWeights {
    pub task: f64,
    pub lm: f64,
    pub explanation: f64,
}

impl TaskLossWeights {
    pub const SGD: TaskLossWeights = TaskLossWeights {
        task: 0.35,
        lm: 0.15,
        explanation: 0.5,
    };
    pub const REINFORCE: TaskLossWeights = TaskLossWeights {
        task: 0.025,
        lm: 0.025,
        explanation: 0.95,
    };
}

impl Default for TaskLossWeights {
    fn default() -> Self {
        Self::SGD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossInputs {
    pub l_task: f64,
    pub l_lm: f64,
    pub l_exp: f64,
    pub weights: TaskLossWeights,
}

/// λ1·L_task + λ2·L_LM + λ3·L_exp
pub fn task_model_total_loss(inputs: &LossInputs) -> f64 {
    let w = inputs.weights;
    w.task * inputs.l_task + w.lm * inputs.l_lm + w.explanation * inputs.l_exp
}

/// Loss weights for the simulator's three conditioning modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorWeights {
    pub input_and_explanation: f64,
    pub input_only: f64,
    pub explanation_only: f64,
}

impl SimulatorWeights {
    pub const COSE: SimulatorWeights = SimulatorWeights {
        input_and_explanation: 0.5,
        input_only: 0.5,
        explanation_only: 0.0,
    };
    pub const NLI: SimulatorWeights = SimulatorWeights {
        input_and_explanation: 0.4,
        input_only: 0.4,
        explanation_only: 0.2,
    };
}

/// λ_{x,e}·L(ŷ|x,ê) + λ_x·L(ŷ|x) + λ_e·L(ŷ|ê)
pub fn simulator_loss(w: &SimulatorWeights, l_full: f64, l_input: f64, l_expl: f64) -> f64 {
    w.input_and_explanation * l_full + w.input_only * l_input + w.explanation_only * l_expl
}

/// Forward/backward pair of the straight-through relaxation: `hard` is consumed
/// by the forward computation, gradients flow through `soft`.
#[derive(Debug, Clone, PartialEq)]
pub struct StraightThrough {
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
    pub index: usize,
}

pub fn straight_through_softmax(
    logits: &[f64],
    temperature: f64,
) -> Result<StraightThrough, ObjectiveError> {
    if logits.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ObjectiveError::BadTemperature(temperature));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(ObjectiveError::NonFinite(i));
    }
    let index = argmax(logits);
    let max = logits[index];
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let soft = exps.into_iter().map(|e| e / z).collect();
    let mut hard = vec![0.0; logits.len()];
    hard[index] = 1.0;
    Ok(StraightThrough { hard, soft, index })
}

/// Named hyperparameter defaults for the training objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    /// Task/LM mixing weight α for the multi-task objective.
    pub mt_alpha: f64,
    pub task_loss_weights: TaskLossWeights,
    /// Reward/penalty trade-off α for explanation optimization, per dataset.
    pub expl_alpha_cqa: f64,
    pub expl_alpha_snli: f64,
    pub simulator_weights_cose: SimulatorWeights,
    pub simulator_weights_nli: SimulatorWeights,
    pub gumbel_temperature: f64,
    pub learning_rate: f64,
    pub batch_size_cqa: usize,
    pub batch_size_snli: usize,
}

pub const PRESET_NAMES: [&str; 3] = ["paper-mt", "paper-sgd", "paper-rl"];

pub fn preset(name: &str) -> Result<Preset, ObjectiveError> {
    let base = Preset {
        name: name.to_string(),
        mt_alpha: 0.5,
        task_loss_weights: TaskLossWeights::SGD,
        expl_alpha_cqa: 0.8,
        expl_alpha_snli: 0.9,
        simulator_weights_cose: SimulatorWeights::COSE,
        simulator_weights_nli: SimulatorWeights::NLI,
        gumbel_temperature: 1.0,
        learning_rate: 1e-4,
        batch_size_cqa: 12,
        batch_size_snli: 36,
    };
    match name {
        "paper-mt" | "paper-sgd" => Ok(base),
        "paper-rl" => Ok(Preset {
            task_loss_weights: TaskLossWeights::REINFORCE,
            expl_alpha_cqa: 0.8,
            expl_alpha_snli: 0.8,
            ..base
        }),
        other => Err(ObjectiveError::UnknownPreset(other.to_string())),
    }
}
