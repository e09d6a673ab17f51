use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arena::{ArenaTable, PrimaryMetric};
use super::config::RunConfig;
use crate::cot_format::extract_answer;
use crate::error::{LabError, Result};
use crate::exec::ExecMode;
use crate::grpo::{train_grpo, EvalSnapshot};
use crate::io::{write_json, write_jsonl, Header, FORMAT_VERSION};
use crate::metrics::{classification_metrics, triplet_metrics, LabelRecord, MetricReport, PredictionRecord, RecordValue, SetRecord, TripletClasses, PREDICTION_SCHEMA};
use crate::policy::{load_checkpoint, save_checkpoint, PolicyParams, TrainingExample};
use crate::refine::{run_refinement, write_pseudo_labels, IterationReport, ScriptedTeacher, Teacher, PSEUDO_LABEL_SCHEMA};
use crate::reward::normalize_answer;
use crate::seed;
use crate::sft::{answer_examples, run_sft, trace_examples, SftConfig};
use crate::synth::{gen_dataset, standard_vocab, ConstraintBundle, TaskInstance, TaskKind, TeacherTrace, CONTEXT_DIM};

pub const DATASET_SCHEMA: &str = "task_instance";
pub const TRACE_SCHEMA: &str = "teacher_trace";
pub const CURVE_SCHEMA: &str = "grpo_step";
pub const TOY_MODEL: &str = "toy-policy";

/// Training and held-out sets for a config.
pub fn datasets(cfg: &RunConfig) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>)> {
    let d = cfg.dataset;
    Ok((
        gen_dataset(cfg.seed, d.kind, d.train_size)?,
        gen_dataset(cfg.seed.wrapping_add(d.eval_seed_offset), d.kind, d.eval_size)?,
    ))
}

pub fn dataset_header(kind: TaskKind, seed: u64) -> Header {
    Header::new(DATASET_SCHEMA).with("task", kind.as_str()).with("seed", seed)
}

/// Greedy-decoded answers as prediction records (`null` when no answer can
/// be extracted).
pub fn policy_predictions(
    policy: &PolicyParams,
    instances: &[TaskInstance],
    max_len: usize,
    mode: ExecMode,
) -> Result<Vec<PredictionRecord>> {
    mode.try_map(instances, |inst| -> Result<PredictionRecord> {
        let out = policy.greedy(&inst.context, max_len)?;
        let answer = extract_answer(&policy.vocab.detokenize(&out.tokens));
        Ok(PredictionRecord {
            id: inst.id.clone(),
            value: answer.map(|a| match inst.kind {
                TaskKind::Triplet => RecordValue::Set(vec![a]),
                _ => RecordValue::Label(a),
            }),
        })
    })
}

/// Scores predictions against instance labels. Answers that name no
/// declared class are wrong answers here, not malformed records.
pub fn score_predictions(preds: &[PredictionRecord], instances: &[TaskInstance]) -> Result<MetricReport> {
    let kind = instances.first().ok_or(LabError::Empty("no instances to score"))?.kind;
    if instances.iter().any(|i| i.kind != kind) || preds.len() != instances.len() {
        return Err(LabError::Shape("predictions and instances must align and share one task kind".into()));
    }
    let bundle = ConstraintBundle::for_kind(kind);
    match kind {
        TaskKind::Triplet => {
            let classes = TripletClasses::from_bundle(&bundle);
            let declared: Vec<String> = classes.triplets.iter().map(|t| normalize_answer(t)).collect();
            let recs: Vec<SetRecord> = preds
                .iter()
                .zip(instances)
                .map(|(p, i)| SetRecord {
                    id: i.id.clone(),
                    pred: match &p.value {
                        Some(RecordValue::Set(s)) => s.iter().filter(|t| declared.contains(&normalize_answer(t))).map(|t| normalize_answer(t)).collect(),
                        _ => Vec::new(),
                    },
                    truth: vec![normalize_answer(&i.label)],
                })
                .collect();
            triplet_metrics(&recs, &classes)
        }
        _ => {
            let declared: Vec<String> = bundle.labels.iter().map(|l| normalize_answer(l)).collect();
            let recs: Vec<LabelRecord> = preds
                .iter()
                .zip(instances)
                .map(|(p, i)| LabelRecord {
                    id: i.id.clone(),
                    pred: match &p.value {
                        Some(RecordValue::Label(l)) if declared.contains(&normalize_answer(l)) => Some(l.clone()),
                        _ => None,
                    },
                    truth: i.label.clone(),
                })
                .collect();
            classification_metrics(&recs, &bundle.labels)
        }
    }
}

pub fn primary_metric(kind: TaskKind) -> (PrimaryMetric, &'static str) {
    match kind {
        TaskKind::Triplet => (PrimaryMetric::TripletAccuracy, "triplet_accuracy"),
        _ => (PrimaryMetric::Accuracy, "accuracy"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoSummary {
    pub snapshots: Vec<EvalSnapshot>,
}

/// Manifest of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub stages_run: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
    pub final_metrics: Option<MetricReport>,
    pub grpo: Option<GrpoSummary>,
    pub refinement: Option<Vec<IterationReport>>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    format_version: u32,
    seed: u64,
    config_hash: &'a str,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct SftLog<'a> {
    stage: &'a str,
    config: &'a SftConfig,
    training_seed: u64,
    losses: &'a [f64],
}

#[derive(Serialize)]
struct Iterations<'a> {
    iterations: &'a [IterationReport],
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    hash: String,
    artifacts: Vec<ArtifactEntry>,
    progress: &'a mut dyn FnMut(&str),
}

impl Run<'_> {
    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.out.join(name);
        let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
        self.artifacts.push(ArtifactEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn header(&self, schema: &str) -> Header {
        Header::new(schema).with("seed", self.cfg.seed).with("config_hash", &self.hash)
    }

    fn jsonl<R: Serialize>(&mut self, name: &str, header: Header, records: &[R]) -> Result<()> {
        write_jsonl(&self.out.join(name), &header, records)?;
        self.record(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, body: T) -> Result<()> {
        let stamped = Stamped {
            format_version: FORMAT_VERSION,
            seed: self.cfg.seed,
            config_hash: &self.hash,
            body,
        };
        write_json(&self.out.join(name), &stamped)?;
        self.record(name)
    }

    fn checkpoint(&mut self, name: &str, policy: &PolicyParams) -> Result<()> {
        save_checkpoint(policy, &self.out.join(name))?;
        self.record(name)
    }

    fn sft_log(&mut self, name: &str, stage: &str, config: &SftConfig, training_seed: u64, losses: &[f64]) -> Result<()> {
        self.json(
            name,
            SftLog {
                stage,
                config,
                training_seed,
                losses,
            },
        )
    }

    fn say(&mut self, msg: &str) {
        (self.progress)(msg);
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        LabError::Stage { .. } => e,
        other => LabError::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn loss_tail(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(50)..];
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

pub fn run_stage_pipeline(cfg: &RunConfig, mode: ExecMode) -> Result<RunSummary> {
    run_stage_pipeline_with(cfg, mode, &mut |_| {})
}

/// Runs the enabled stages in order (label SFT, CoT cold start, GRPO,
/// refinement), writing artifacts into `cfg.out` as each finishes. With
/// every stage disabled only `config.toml` is written. The config echo
/// records the output location, so it stays out of the artifact manifest.
pub fn run_stage_pipeline_with(cfg: &RunConfig, mode: ExecMode, progress: &mut dyn FnMut(&str)) -> Result<RunSummary> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    fs::create_dir_all(&cfg.out).map_err(|e| LabError::io(&cfg.out, e))?;
    let mut run = Run {
        cfg,
        out: cfg.out.clone(),
        hash: hash.clone(),
        artifacts: Vec::new(),
        progress,
    };
    let echo = format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml());
    fs::write(run.out.join("config.toml"), echo).map_err(|e| LabError::io(run.out.join("config.toml"), e))?;
    let mut summary = RunSummary {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: hash,
        stages_run: Vec::new(),
        artifacts: Vec::new(),
        final_metrics: None,
        grpo: None,
        refinement: None,
    };
    if !cfg.stages.any() {
        summary.artifacts = run.artifacts;
        return Ok(summary);
    }

    let (train, eval) = stage("dataset", datasets(cfg))?;
    let kind = cfg.dataset.kind;
    run.jsonl("train.jsonl", run.header(DATASET_SCHEMA).with("task", kind.as_str()), &train)?;
    run.jsonl("eval.jsonl", run.header(DATASET_SCHEMA).with("task", kind.as_str()), &eval)?;

    let mut policy = match &cfg.init_checkpoint {
        Some(p) => stage("init", load_checkpoint(p))?,
        None => stage(
            "init",
            PolicyParams::init(Arc::new(standard_vocab()), cfg.policy.embed, cfg.policy.hidden, CONTEXT_DIM, cfg.seed),
        )?,
    };
    let max_len = cfg.grpo.max_output_len;
    let teacher = ScriptedTeacher::new();
    let mut cold_start: Vec<TrainingExample> = Vec::new();

    if cfg.stages.label_sft {
        run.say("label sft");
        let s = seed::derive_step(cfg.seed, "label-sft", 0);
        let (p, rep) = stage(
            "label_sft",
            answer_examples(&policy.vocab, &train).and_then(|ex| run_sft(&policy, &ex, &cfg.label_sft, s, mode)),
        )?;
        policy = p;
        run.checkpoint("policy_label_sft.ckpt", &policy)?;
        run.sft_log("label_sft.json", "label_sft", &cfg.label_sft, s, &rep.losses)?;
        run.say(&format!("label sft loss {:.4}", loss_tail(&rep.losses)));
        summary.stages_run.push("label_sft".into());
    }

    if cfg.stages.cot_sft || (cfg.stages.refine && cfg.refine.include_cold_start_traces) {
        let traces = stage(
            "cot_sft",
            train
                .iter()
                .map(|i| {
                    Ok(TeacherTrace {
                        id: i.id.clone(),
                        trace: teacher.trace(i)?,
                    })
                })
                .collect::<Result<Vec<_>>>(),
        )?;
        cold_start = stage(
            "cot_sft",
            trace_examples(&policy.vocab, train.iter().zip(traces.iter().map(|t| t.trace.as_str()))),
        )?;
        if cfg.stages.cot_sft {
            run.say("cot cold start");
            run.jsonl("cot_traces.jsonl", run.header(TRACE_SCHEMA).with("task", kind.as_str()), &traces)?;
            let s = seed::derive_step(cfg.seed, "cot-sft", 0);
            let (p, rep) = stage("cot_sft", run_sft(&policy, &cold_start, &cfg.cot_sft, s, mode))?;
            policy = p;
            run.sft_log("cot_sft.json", "cot_sft", &cfg.cot_sft, s, &rep.losses)?;
            run.say(&format!("cot sft loss {:.4}", loss_tail(&rep.losses)));

            let mut mixed = cold_start.clone();
            let answers = stage("cot_sft", answer_examples(&policy.vocab, &train))?;
            for _ in 0..cfg.replay.answers_per_trace {
                mixed.extend_from_slice(&answers);
            }
            let s = seed::derive_step(cfg.seed, "replay", 0);
            let (p, rep) = stage("cot_sft", run_sft(&policy, &mixed, &cfg.replay.sft, s, mode))?;
            policy = p;
            run.sft_log("replay.json", "replay", &cfg.replay.sft, s, &rep.losses)?;
            run.checkpoint("policy_cot.ckpt", &policy)?;
            summary.stages_run.push("cot_sft".into());
        }
    }

    if cfg.stages.grpo {
        run.say("grpo");
        let s = seed::derive_step(cfg.seed, "grpo", 0);
        let (p, rep) = stage("grpo", train_grpo(&policy, &train, &eval, &cfg.grpo, &cfg.reward, s, mode))?;
        policy = p;
        run.jsonl("reward_curve.jsonl", run.header(CURVE_SCHEMA), &rep.curve)?;
        run.json("grpo_report.json", &rep)?;
        run.checkpoint("policy_grpo.ckpt", &policy)?;
        for snap in &rep.snapshots {
            run.say(&format!(
                "grpo step {} reward {:.3} level1 {:.3} accuracy {:.3}",
                snap.step, snap.mean_reward, snap.level1_rate, snap.greedy_accuracy
            ));
        }
        summary.grpo = Some(GrpoSummary { snapshots: rep.snapshots });
        summary.stages_run.push("grpo".into());
    }

    if cfg.stages.refine {
        run.say("refinement");
        let loop_cfg = cfg.refine.loop_cfg(max_len);
        let extra: &[TrainingExample] = if cfg.refine.include_cold_start_traces { &cold_start } else { &[] };
        let s = seed::derive_step(cfg.seed, "refine", 0);
        let mut reports = Vec::new();
        let mut hook = |r: &IterationReport, p: &PolicyParams| -> Result<()> {
            run.checkpoint(&format!("policy_refine_{}.ckpt", r.iteration), p)?;
            run.say(&format!(
                "iteration {} hard {} predicted {} generated {} accuracy {:.3}",
                r.iteration, r.counts.hard, r.counts.predicted_pseudo, r.counts.generated_pseudo, r.accuracy_after
            ));
            reports.push(r.clone());
            Ok(())
        };
        let outcome = run_refinement(&policy, &train, &eval, &teacher, extra, &loop_cfg, s, mode, &mut hook);
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                run.json("refine_reports.json", Iterations { iterations: &reports })?;
                return Err(LabError::Stage {
                    stage: "refine",
                    source: Box::new(e),
                });
            }
        };
        policy = outcome.policy;
        let header = run.header(PSEUDO_LABEL_SCHEMA).with("task", kind.as_str());
        write_pseudo_labels(&run.out.join("pseudo_labels.jsonl"), &header, &outcome.corpus)?;
        run.record("pseudo_labels.jsonl")?;
        run.json("refine_reports.json", Iterations { iterations: &outcome.reports })?;
        summary.refinement = Some(outcome.reports);
        summary.stages_run.push("refine".into());
    }

    let preds = stage("evaluate", policy_predictions(&policy, &eval, max_len, mode))?;
    run.jsonl("predictions.jsonl", run.header(PREDICTION_SCHEMA).with("task", kind.as_str()), &preds)?;
    let metrics = stage("evaluate", score_predictions(&preds, &eval))?;
    run.json("metrics.json", &metrics)?;
    let (primary, key) = primary_metric(kind);
    let task = format!("synthetic_{kind}");
    let mut arena = ArenaTable::new([(task.clone(), primary)].into());
    arena.insert(TOY_MODEL, &task, metrics.get(key).unwrap_or(0.0))?;
    write_json(&run.out.join("arena.json"), &arena)?;
    run.record("arena.json")?;
    run.checkpoint("policy_final.ckpt", &policy)?;
    run.say(&format!("final {key} {:.2}", metrics.get(key).unwrap_or(0.0)));
    summary.final_metrics = Some(metrics);
    summary.artifacts = run.artifacts;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Reads a dataset written by `gen` or a pipeline run.
pub fn read_dataset(path: &Path) -> Result<Vec<TaskInstance>> {
    Ok(crate::io::read_jsonl(path, DATASET_SCHEMA)?.1)
}

#[cfg(test)]
mod tests;
