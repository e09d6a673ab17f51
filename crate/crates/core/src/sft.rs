//! Minibatch supervised fine-tuning with plain gradient descent on the
//! token-averaged cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exec::ExecMode;
use crate::policy::{Direction, PolicyParams, TrainingExample};
use crate::seed;
use crate::synth::{bare_answer, encode_target, TaskInstance};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// When set, the rate decays linearly from `learning_rate` at the first
    /// step to this value at the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    pub batch_size: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 1.0,
            final_learning_rate: None,
            batch_size: 32,
        }
    }
}

impl SftConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.steps > 1 => {
                let frac = step as f64 / (self.steps - 1) as f64;
                self.learning_rate + (end - self.learning_rate) * frac
            }
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Minibatch loss before each step.
    pub losses: Vec<f64>,
}

/// `steps` descent updates, each on a seeded minibatch drawn without
/// replacement (the whole set when it is smaller than the batch).
pub fn run_sft(
    policy: &PolicyParams,
    examples: &[TrainingExample],
    cfg: &SftConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<(PolicyParams, SftReport)> {
    if cfg.steps > 0 && examples.is_empty() {
        return Err(LabError::Empty("no SFT examples"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) || !cfg.final_learning_rate.map_or(true, |r| r >= 0.0) {
        return Err(LabError::Config("SFT needs batch_size >= 1 and learning_rate >= 0".into()));
    }
    let mut policy = policy.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    let k = cfg.batch_size.min(examples.len());
    for step in 0..cfg.steps {
        let batch: Vec<TrainingExample> = if k == examples.len() {
            examples.to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_step(seed, "sft-batch", step as u64));
            let mut idx = rand::seq::index::sample(&mut rng, examples.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| examples[i].clone()).collect()
        };
        let (loss, grad) = policy.ce_loss_grad(&batch, mode)?;
        losses.push(loss);
        policy = policy.apply_gradient(&grad, cfg.learning_rate_at(step), Direction::Descend)?;
    }
    Ok((policy, SftReport { losses }))
}

/// Label-only targets: `<answer> label </answer> <eos>`.
pub fn answer_examples(vocab: &Vocab, instances: &[TaskInstance]) -> Result<Vec<TrainingExample>> {
    instances
        .iter()
        .map(|i| {
            Ok(TrainingExample {
                context: i.context.clone(),
                target_tokens: encode_target(vocab, &bare_answer(&i.label))?,
            })
        })
        .collect()
}

/// Targets from full trace texts, paired with each instance's context.
pub fn trace_examples<'a>(
    vocab: &Vocab,
    pairs: impl IntoIterator<Item = (&'a TaskInstance, &'a str)>,
) -> Result<Vec<TrainingExample>> {
    pairs
        .into_iter()
        .map(|(inst, text)| {
            Ok(TrainingExample {
                context: inst.context.clone(),
                target_tokens: encode_target(vocab, text)?,
            })
        })
        .collect()
}
