//! Critic-free group policy optimization.
//!
//! For each instance a group of G outputs is sampled; rewards are
//! standardized within the group and every output's log-likelihood is pushed
//! up or down by its advantage. With entropy focusing on, each token's
//! log-probability is additionally weighted by a softmax of the per-position
//! entropies, concentrating the update on uncertain positions.
//!
//! The objective is used exactly as written: on-policy, one plain gradient
//! ascent step per sampled batch, no ratio clipping and no KL term.
//! Advantages and token weights are constants with respect to θ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cot_format::parse_output;
use crate::error::{LabError, Result};
use crate::exec::ExecMode;
use crate::policy::{shannon_entropy, Direction, PolicyParams, Rollout, Weights};
use crate::reward::{composite_reward, RewardBreakdown, RewardConfig};
use crate::seed;
use crate::synth::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub entropy_focus: bool,
    pub learning_rate: f64,
    pub max_output_len: usize,
    /// Gradient steps in a training run.
    pub steps: usize,
    /// Instances (groups) per gradient step.
    pub batch_instances: usize,
    /// Held-out instances sampled for the reward snapshots.
    pub eval_instances: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            epsilon: 1e-4,
            tau: 1.0,
            entropy_focus: true,
            learning_rate: 0.05,
            max_output_len: 32,
            steps: 200,
            batch_instances: 16,
            eval_instances: 64,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(LabError::GroupTooSmall(self.group_size));
        }
        if !(self.epsilon > 0.0) {
            return Err(LabError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.tau > 0.0) {
            return Err(LabError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LabError::Config("learning_rate must be > 0".into()));
        }
        if self.max_output_len == 0 || self.batch_instances == 0 {
            return Err(LabError::Config("max_output_len and batch_instances must be >= 1".into()));
        }
        Ok(())
    }
}

/// Â_i = (r_i − μ) / (σ + ε) with the population standard deviation.
pub fn normalize_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(LabError::GroupTooSmall(rewards.len()));
    }
    if !(epsilon > 0.0) {
        return Err(LabError::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Entropy (nats) of a next-token distribution; rejects vectors that are not
/// probability distributions within 1e-9.
pub fn token_entropy(dist: &[f64]) -> Result<f64> {
    const TOL: f64 = 1e-9;
    if let Some((index, &value)) = dist.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(LabError::InvalidProbability { index, value });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > TOL {
        return Err(LabError::NotNormalized { sum, tol: TOL });
    }
    Ok(shannon_entropy(dist))
}

/// w_t = exp(H_t/τ) / mean_j exp(H_j/τ), evaluated with the maximum
/// subtracted inside the exponent.
pub fn entropy_weights(entropies: &[f64], tau: f64) -> Result<Vec<f64>> {
    if entropies.is_empty() {
        return Err(LabError::Empty("entropy weights need at least one position"));
    }
    if !(tau > 0.0) {
        return Err(LabError::Config(format!("tau must be > 0, got {tau}")));
    }
    let max = entropies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = entropies.iter().map(|h| ((h - max) / tau).exp()).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    Ok(e.into_iter().map(|x| x / mean).collect())
}

/// G sampled outputs for one instance, before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    pub instance_id: String,
    pub context: Vec<f64>,
    pub outputs: Vec<Rollout>,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub instance_id: String,
    pub context: Vec<f64>,
    pub outputs: Vec<Rollout>,
    pub texts: Vec<String>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Per-output, per-position token weights (all ones without focusing).
    pub weights: Vec<Vec<f64>>,
}

/// Samples `group_size` outputs; output i uses the seed derived from
/// (rng_seed, instance id, i).
pub fn sample_group(policy: &PolicyParams, instance: &TaskInstance, cfg: &GrpoConfig, rng_seed: u64) -> Result<SampledGroup> {
    if cfg.group_size < 2 {
        return Err(LabError::GroupTooSmall(cfg.group_size));
    }
    if cfg.max_output_len == 0 {
        return Err(LabError::Config("max_output_len must be >= 1".into()));
    }
    let outputs = (0..cfg.group_size)
        .map(|i| policy.sample(&instance.context, seed::derive(rng_seed, &instance.id, i as u64), cfg.max_output_len))
        .collect::<Result<Vec<_>>>()?;
    let texts = outputs.iter().map(|o| policy.vocab.detokenize(&o.tokens)).collect();
    Ok(SampledGroup {
        instance_id: instance.id.clone(),
        context: instance.context.clone(),
        outputs,
        texts,
    })
}

impl SampledGroup {
    /// Rewards at `step`, group-normalized advantages and token weights.
    pub fn score(self, label: &str, reward: &RewardConfig, step: u64, cfg: &GrpoConfig) -> Result<RolloutGroup> {
        let breakdowns: Vec<RewardBreakdown> = self
            .texts
            .iter()
            .map(|t| composite_reward(&parse_output(t), label, reward, step))
            .collect();
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let advantages = normalize_advantages(&rewards, cfg.epsilon)?;
        let weights = self
            .outputs
            .iter()
            .map(|o| {
                if cfg.entropy_focus {
                    entropy_weights(&o.entropies, cfg.tau)
                } else {
                    Ok(vec![1.0; o.tokens.len()])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RolloutGroup {
            instance_id: self.instance_id,
            context: self.context,
            outputs: self.outputs,
            texts: self.texts,
            breakdowns,
            rewards,
            advantages,
            weights,
        })
    }
}

/// ∇𝒥 for one group and 𝒥 itself at the current parameters.
///
/// With `entropy_focus` the per-token coefficient is Â_i·w_t/G; without it
/// the sequence-level objective is used, coefficient Â_i/G on every token.
pub fn group_gradient(policy: &PolicyParams, group: &RolloutGroup, cfg: &GrpoConfig) -> Result<(Weights, f64)> {
    let g = group.outputs.len();
    if g < 2 {
        return Err(LabError::GroupTooSmall(g));
    }
    if group.advantages.len() != g || group.weights.len() != g {
        return Err(LabError::Shape("group fields disagree in length".into()));
    }
    let gf = g as f64;
    let mut grad = Weights::zeros(policy.dims);
    let mut objective = 0.0;
    for ((out, &adv), w) in group.outputs.iter().zip(&group.advantages).zip(&group.weights) {
        let coeffs: Vec<f64> = if cfg.entropy_focus {
            if w.len() != out.tokens.len() {
                return Err(LabError::Shape("token weights do not match output length".into()));
            }
            w.iter().map(|wt| adv * wt / gf).collect()
        } else {
            vec![adv / gf; out.tokens.len()]
        };
        let (part, _) = policy.accumulate_logprob_grad(&group.context, &out.tokens, &coeffs, &mut grad)?;
        objective += part;
    }
    if !grad.all_finite() || !objective.is_finite() {
        return Err(LabError::NonFiniteGradient {
            instance_id: group.instance_id.clone(),
        });
    }
    Ok((grad, objective))
}

/// One ascent step on a single group. Returns the new parameters and the
/// objective before the step.
pub fn grpo_gradient_step(policy: &PolicyParams, group: &RolloutGroup, cfg: &GrpoConfig) -> Result<(PolicyParams, f64)> {
    let (grad, objective) = group_gradient(policy, group, cfg)?;
    Ok((policy.apply_gradient(&grad, cfg.learning_rate, Direction::Ascend)?, objective))
}

/// One ascent step on the mean objective over several groups. Per-group
/// gradients are computed concurrently against the same snapshot and summed
/// in input order.
pub fn grpo_batch_step(
    policy: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
    mode: ExecMode,
) -> Result<(PolicyParams, f64)> {
    if groups.is_empty() {
        return Err(LabError::Empty("no groups in batch"));
    }
    let parts = mode.try_map(groups, |g| group_gradient(policy, g, cfg))?;
    let mut grad = Weights::zeros(policy.dims);
    let mut objective = 0.0;
    for (g, o) in &parts {
        grad.add_scaled(g, 1.0);
        objective += o;
    }
    let n = groups.len() as f64;
    grad.scale(1.0 / n);
    Ok((policy.apply_gradient(&grad, cfg.learning_rate, Direction::Ascend)?, objective / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub mean_reward: f64,
    pub format_rate: f64,
    pub answer_rate: f64,
    pub level1_rate: f64,
    pub mean_token_entropy: f64,
    pub objective: f64,
}

/// Reward statistics on a fixed held-out sample of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: u64,
    pub mean_reward: f64,
    pub format_rate: f64,
    pub answer_rate: f64,
    pub level1_rate: f64,
    pub greedy_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoReport {
    pub curve: Vec<StepStats>,
    pub snapshots: Vec<EvalSnapshot>,
}

impl GrpoReport {
    pub fn snapshot(&self, step: u64) -> Option<&EvalSnapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }
}

fn summarize(groups: &[RolloutGroup]) -> (f64, f64, f64, f64, f64) {
    let mut n = 0.0;
    let (mut r, mut f, mut a, mut l, mut h, mut nt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for g in groups {
        for (b, o) in g.breakdowns.iter().zip(&g.outputs) {
            n += 1.0;
            r += b.total;
            f += b.format_ind as u8 as f64;
            a += b.answer_ind as u8 as f64;
            l += b.structure_ind as u8 as f64;
            h += o.entropies.iter().sum::<f64>();
            nt += o.entropies.len() as f64;
        }
    }
    (r / n, f / n, a / n, l / n, if nt > 0.0 { h / nt } else { 0.0 })
}

/// Fraction of instances whose greedy decode carries the correct answer.
pub fn greedy_accuracy(policy: &PolicyParams, instances: &[TaskInstance], max_len: usize, mode: ExecMode) -> Result<f64> {
    if instances.is_empty() {
        return Err(LabError::Empty("no evaluation instances"));
    }
    let hits = mode.try_map(instances, |inst| -> Result<bool> {
        let out = policy.greedy(&inst.context, max_len)?;
        let trace = parse_output(&policy.vocab.detokenize(&out.tokens));
        Ok(crate::reward::answer_indicator(&trace, &inst.label))
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / instances.len() as f64)
}

/// One scored group per instance, sampled concurrently in input order.
pub fn sample_scored(
    policy: &PolicyParams,
    instances: &[TaskInstance],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
    step: u64,
    rng_seed: u64,
    mode: ExecMode,
) -> Result<Vec<RolloutGroup>> {
    mode.try_map(instances, |inst| {
        sample_group(policy, inst, cfg, rng_seed)?.score(&inst.label, reward, step, cfg)
    })
}

pub fn evaluate_snapshot(
    policy: &PolicyParams,
    eval: &[TaskInstance],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
    step: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<EvalSnapshot> {
    let sample = &eval[..cfg.eval_instances.min(eval.len())];
    let groups = sample_scored(policy, sample, cfg, reward, step, seed::derive_step(seed, "grpo-eval", 0), mode)?;
    let (mean_reward, format_rate, answer_rate, level1_rate, _) = summarize(&groups);
    Ok(EvalSnapshot {
        step,
        mean_reward,
        format_rate,
        answer_rate,
        level1_rate,
        greedy_accuracy: greedy_accuracy(policy, eval, cfg.max_output_len, mode)?,
    })
}

/// Full training run: `cfg.steps` batch updates, snapshots on `eval` at
/// step 0, at the structure cutoff (when inside the run) and at the end.
pub fn train_grpo(
    policy: &PolicyParams,
    train: &[TaskInstance],
    eval: &[TaskInstance],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<(PolicyParams, GrpoReport)> {
    cfg.validate()?;
    reward.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(LabError::Empty("GRPO needs training and evaluation instances"));
    }
    let mut snapshot_steps = vec![0u64, cfg.steps as u64];
    if reward.structure_cutoff_step < cfg.steps as u64 {
        snapshot_steps.push(reward.structure_cutoff_step);
    }
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();

    let mut policy = policy.clone();
    let mut report = GrpoReport {
        curve: Vec::with_capacity(cfg.steps),
        snapshots: Vec::new(),
    };
    let batch_size = cfg.batch_instances.min(train.len());
    for step in 0..=cfg.steps as u64 {
        if snapshot_steps.contains(&step) {
            report
                .snapshots
                .push(evaluate_snapshot(&policy, eval, cfg, reward, step, seed, mode)?);
        }
        if step == cfg.steps as u64 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_step(seed, "grpo-batch", step));
        let mut picks = rand::seq::index::sample(&mut rng, train.len(), batch_size).into_vec();
        picks.sort_unstable();
        let batch: Vec<TaskInstance> = picks.into_iter().map(|i| train[i].clone()).collect();
        let groups = sample_scored(
            &policy,
            &batch,
            cfg,
            reward,
            step,
            seed::derive_step(seed, "grpo-rollout", step),
            mode,
        )?;
        let (mean_reward, format_rate, answer_rate, level1_rate, mean_token_entropy) = summarize(&groups);
        let (next, objective) = grpo_batch_step(&policy, &groups, cfg, mode)?;
        policy = next;
        report.curve.push(StepStats {
            step,
            mean_reward,
            format_rate,
            answer_rate,
            level1_rate,
            mean_token_entropy,
            objective,
        });
    }
    Ok((policy, report))
}
