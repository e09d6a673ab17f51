//! Iterative refinement: find instances the policy cannot solve in K
//! rollouts, collect verified traces from the policy itself or from a
//! teacher, and distill the cumulative corpus back into the policy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cot_format::{extract_answer, parse_output};
use crate::error::{LabError, Result};
use crate::exec::ExecMode;
use crate::grpo::greedy_accuracy;
use crate::io::{read_jsonl, write_jsonl, Header};
use crate::policy::{PolicyParams, TrainingExample};
use crate::reward::{answer_indicator, answers_match};
use crate::seed;
use crate::sft::{run_sft, trace_examples, SftConfig};
use crate::synth::{scripted_teacher, ConstraintBundle, TaskInstance, TaskKind};

pub const PSEUDO_LABEL_SCHEMA: &str = "pseudo_label";

/// Source of reference traces for hard instances.
pub trait Teacher: Sync {
    fn trace(&self, instance: &TaskInstance) -> Result<String>;
}

/// Teacher backed by the synthetic scene templates.
#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    bundles: BTreeMap<TaskKind, ConstraintBundle>,
}

impl ScriptedTeacher {
    pub fn new() -> Self {
        Self {
            bundles: TaskKind::ALL.into_iter().map(|k| (k, ConstraintBundle::for_kind(k))).collect(),
        }
    }
}

impl Default for ScriptedTeacher {
    fn default() -> Self {
        Self::new()
    }
}

impl Teacher for ScriptedTeacher {
    fn trace(&self, instance: &TaskInstance) -> Result<String> {
        scripted_teacher(instance, &self.bundles[&instance.kind])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pathway {
    Predicted,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: String,
    pub pathway: Pathway,
    pub trace: String,
    pub label: String,
}

impl PseudoLabel {
    /// The trace's extracted answer equals the label.
    pub fn is_sound(&self) -> bool {
        extract_answer(&self.trace).is_some_and(|a| answers_match(&a, &self.label))
    }
}

/// Per-iteration bookkeeping. `hard` includes instances re-tagged after a
/// failed fresh rollout, so `predicted_pseudo + hard == total` and
/// `generated_pseudo + teacher_failures == hard`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineCounts {
    pub total: usize,
    pub hard: usize,
    pub retagged: usize,
    pub predicted_pseudo: usize,
    pub generated_pseudo: usize,
    pub teacher_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub seed: u64,
    pub counts: RefineCounts,
    /// Pseudo-labels from this iteration whose (id, trace) was new.
    pub added: usize,
    /// Size of the cumulative pseudo-label corpus after this iteration.
    pub corpus_size: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub distill_loss_first: Option<f64>,
    pub distill_loss_last: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub k_rollouts: usize,
    pub iterations: usize,
    pub max_output_len: usize,
    pub distill: SftConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            k_rollouts: 3,
            iterations: 3,
            max_output_len: 32,
            distill: SftConfig {
                steps: 100,
                learning_rate: 0.05,
                final_learning_rate: None,
                batch_size: 32,
            },
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_rollouts == 0 || self.iterations == 0 || self.max_output_len == 0 {
            return Err(LabError::Config("refinement needs k_rollouts, iterations and max_output_len >= 1".into()));
        }
        Ok(())
    }
}

fn rollout_text(policy: &PolicyParams, instance: &TaskInstance, seed: u64, max_len: usize) -> Result<String> {
    let out = policy.sample(&instance.context, seed, max_len)?;
    Ok(policy.vocab.detokenize(&out.tokens))
}

/// True when none of the K seeded rollouts answers correctly. Rollout `k`
/// uses seed `derive(rng_seed, id, k)`.
pub fn identify_hard(
    policy: &PolicyParams,
    instance: &TaskInstance,
    k: usize,
    max_len: usize,
    rng_seed: u64,
) -> Result<bool> {
    if k == 0 {
        return Err(LabError::Config("k_rollouts must be at least 1".into()));
    }
    for j in 0..k {
        let text = rollout_text(policy, instance, seed::derive(rng_seed, &instance.id, j as u64), max_len)?;
        if answer_indicator(&parse_output(&text), &instance.label) {
            return Ok(false);
        }
    }
    Ok(true)
}

enum Outcome {
    Predicted(String),
    Generated(String, bool),
    TeacherFailed(bool),
}

/// Step 1 and 2 for one iteration. Non-hard instances get one more rollout
/// (stream K); a correct one becomes a Predicted label, a wrong one re-tags
/// the instance as hard. Hard instances get a teacher trace, kept only if
/// its answer checks out.
pub fn build_pseudo_labels(
    policy: &PolicyParams,
    dataset: &[TaskInstance],
    teacher: &dyn Teacher,
    cfg: &RefineConfig,
    rng_seed: u64,
    mode: ExecMode,
) -> Result<(Vec<PseudoLabel>, RefineCounts)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(LabError::Empty("refinement dataset"));
    }
    let outcomes = mode.try_map(dataset, |inst| -> Result<Outcome> {
        let mut retagged = false;
        if !identify_hard(policy, inst, cfg.k_rollouts, cfg.max_output_len, rng_seed)? {
            let s = seed::derive(rng_seed, &inst.id, cfg.k_rollouts as u64);
            let text = rollout_text(policy, inst, s, cfg.max_output_len)?;
            if answer_indicator(&parse_output(&text), &inst.label) {
                return Ok(Outcome::Predicted(text));
            }
            retagged = true;
        }
        Ok(match teacher.trace(inst) {
            Ok(t) if extract_answer(&t).is_some_and(|a| answers_match(&a, &inst.label)) => Outcome::Generated(t, retagged),
            _ => Outcome::TeacherFailed(retagged),
        })
    })?;

    let mut counts = RefineCounts {
        total: dataset.len(),
        ..RefineCounts::default()
    };
    let mut labels = Vec::new();
    for (inst, o) in dataset.iter().zip(outcomes) {
        let (pathway, trace) = match o {
            Outcome::Predicted(t) => {
                counts.predicted_pseudo += 1;
                (Pathway::Predicted, t)
            }
            Outcome::Generated(t, re) => {
                counts.hard += 1;
                counts.retagged += re as usize;
                counts.generated_pseudo += 1;
                (Pathway::Generated, t)
            }
            Outcome::TeacherFailed(re) => {
                counts.hard += 1;
                counts.retagged += re as usize;
                counts.teacher_failures += 1;
                continue;
            }
        };
        labels.push(PseudoLabel {
            id: inst.id.clone(),
            pathway,
            trace,
            label: inst.label.clone(),
        });
    }
    Ok((labels, counts))
}

/// Training examples for pseudo-labels, paired with their instance contexts.
pub fn pseudo_label_examples(
    policy: &PolicyParams,
    labels: &[PseudoLabel],
    dataset: &[TaskInstance],
) -> Result<Vec<TrainingExample>> {
    let by_id: HashMap<&str, &TaskInstance> = dataset.iter().map(|i| (i.id.as_str(), i)).collect();
    let pairs = labels
        .iter()
        .map(|l| {
            by_id
                .get(l.id.as_str())
                .map(|inst| (*inst, l.trace.as_str()))
                .ok_or_else(|| LabError::BadRecord {
                    id: l.id.clone(),
                    reason: "pseudo-label refers to no dataset instance".into(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    trace_examples(&policy.vocab, pairs)
}

/// Step 3: SFT on pseudo-label traces plus any fixed extra examples.
pub fn distill_iteration(
    policy: &PolicyParams,
    labels: &[PseudoLabel],
    dataset: &[TaskInstance],
    extra: &[TrainingExample],
    sft: &SftConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<(PolicyParams, Vec<f64>)> {
    if labels.is_empty() {
        return Err(LabError::Empty("no pseudo-labels to distill"));
    }
    let mut examples = pseudo_label_examples(policy, labels, dataset)?;
    examples.extend_from_slice(extra);
    let (next, report) = run_sft(policy, &examples, sft, seed, mode)?;
    if let Some(i) = report.losses.iter().position(|l| !l.is_finite()) {
        return Err(LabError::NonFiniteLoss { batch_index: i });
    }
    if !next.weights.all_finite() {
        return Err(LabError::NonFiniteGradient {
            instance_id: "distillation".into(),
        });
    }
    Ok((next, report.losses))
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub policy: PolicyParams,
    pub reports: Vec<IterationReport>,
    /// Cumulative, exact-trace-deduplicated pseudo-labels in arrival order.
    pub corpus: Vec<PseudoLabel>,
}

/// `cfg.iterations` rounds of build, aggregate, distill. `on_iteration`
/// sees each finished iteration with the policy it produced, so callers can
/// checkpoint; on error the last policy it saw is the last good one.
#[allow(clippy::too_many_arguments)]
pub fn run_refinement(
    policy: &PolicyParams,
    dataset: &[TaskInstance],
    eval: &[TaskInstance],
    teacher: &dyn Teacher,
    extra: &[TrainingExample],
    cfg: &RefineConfig,
    seed: u64,
    mode: ExecMode,
    mut on_iteration: impl FnMut(&IterationReport, &PolicyParams) -> Result<()>,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    if eval.is_empty() {
        return Err(LabError::Empty("refinement evaluation set"));
    }
    let mut policy = policy.clone();
    let mut corpus: Vec<PseudoLabel> = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut reports = Vec::with_capacity(cfg.iterations);
    let mut accuracy = greedy_accuracy(&policy, eval, cfg.max_output_len, mode)?;
    for it in 1..=cfg.iterations {
        let it_seed = seed::derive_step(seed, "refine", it as u64);
        let (labels, counts) = build_pseudo_labels(&policy, dataset, teacher, cfg, it_seed, mode)?;
        let before = corpus.len();
        for l in labels {
            if seen.insert((l.id.clone(), l.trace.clone())) {
                corpus.push(l);
            }
        }
        let added = corpus.len() - before;
        let (next, losses) = distill_iteration(
            &policy,
            &corpus,
            dataset,
            extra,
            &cfg.distill,
            seed::derive_step(it_seed, "distill", 0),
            mode,
        )?;
        policy = next;
        let after = greedy_accuracy(&policy, eval, cfg.max_output_len, mode)?;
        let report = IterationReport {
            iteration: it,
            seed: it_seed,
            counts,
            added,
            corpus_size: corpus.len(),
            accuracy_before: accuracy,
            accuracy_after: after,
            distill_loss_first: losses.first().copied(),
            distill_loss_last: losses.last().copied(),
        };
        accuracy = after;
        on_iteration(&report, &policy)?;
        reports.push(report);
    }
    Ok(RefineOutcome { policy, reports, corpus })
}

/// Writes the corpus as JSONL; `header` must carry the pseudo-label schema.
pub fn write_pseudo_labels(path: &Path, header: &Header, labels: &[PseudoLabel]) -> Result<()> {
    if header.schema != PSEUDO_LABEL_SCHEMA {
        return Err(LabError::Config(format!("pseudo-label export with schema `{}`", header.schema)));
    }
    write_jsonl(path, header, labels)
}

pub fn read_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabel>> {
    Ok(read_jsonl(path, PSEUDO_LABEL_SCHEMA)?.1)
}
