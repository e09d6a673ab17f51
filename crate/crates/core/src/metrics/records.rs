use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    classification_metrics, cvs_scores, localization_metrics, triplet_metrics, Bbox, BoxRecord, CvsOverall,
    CvsRecord, LabelRecord, MetricReport, SetRecord, TripletClasses,
};
use crate::error::{LabError, Result};
use crate::io::read_jsonl;
use crate::synth::{ConstraintBundle, TaskKind};

pub const PREDICTION_SCHEMA: &str = "prediction_record";

/// Evaluation task accepted by `eval --task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Phase,
    Action,
    CvsCriterion,
    Triplet,
    Cvs,
    Localization,
}

impl EvalTask {
    pub const ALL: [EvalTask; 6] = [
        EvalTask::Phase,
        EvalTask::Action,
        EvalTask::CvsCriterion,
        EvalTask::Triplet,
        EvalTask::Cvs,
        EvalTask::Localization,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalTask::Phase => "phase",
            EvalTask::Action => "action",
            EvalTask::CvsCriterion => "cvs_criterion",
            EvalTask::Triplet => "triplet",
            EvalTask::Cvs => "cvs",
            EvalTask::Localization => "localization",
        }
    }
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalTask {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        EvalTask::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LabError::UnknownKind(s.to_string()))
    }
}

/// Payload of one prediction or ground-truth line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordValue {
    Label(String),
    Set(Vec<String>),
    Criteria(Vec<bool>),
    Box(Bbox),
}

/// One line of a prediction or ground-truth file. A `null` value means the
/// model produced nothing for that id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub value: Option<RecordValue>,
}

fn load(path: &Path, task: EvalTask) -> Result<BTreeMap<String, Option<RecordValue>>> {
    let (header, records): (_, Vec<PredictionRecord>) = read_jsonl(path, PREDICTION_SCHEMA)?;
    if let Some(kind) = header.extra.get("task") {
        if kind.as_str() != Some(task.as_str()) {
            return Err(LabError::Config(format!(
                "{}: records are for task {kind}, not {task}",
                path.display()
            )));
        }
    }
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert(r.id.clone(), r.value).is_some() {
            return Err(LabError::BadRecord {
                id: r.id,
                reason: format!("duplicate id in {}", path.display()),
            });
        }
    }
    Ok(out)
}

fn bad(id: &str, reason: &str) -> LabError {
    LabError::BadRecord {
        id: id.to_string(),
        reason: reason.to_string(),
    }
}

fn classes_for(kind: TaskKind) -> Vec<String> {
    ConstraintBundle::for_kind(kind).labels
}

/// Joins prediction and truth files by id and scores them. Every truth id
/// needs a prediction line and every prediction id needs a truth line.
pub fn evaluate_files(task: EvalTask, pred: &Path, truth: &Path, cvs_overall: CvsOverall) -> Result<MetricReport> {
    let preds = load(pred, task)?;
    let truths = load(truth, task)?;
    if let Some(id) = preds.keys().find(|id| !truths.contains_key(*id)) {
        return Err(bad(id, "prediction without ground truth"));
    }
    let mut pairs = Vec::with_capacity(truths.len());
    for (id, t) in truths {
        let t = t.ok_or_else(|| bad(&id, "ground truth is null"))?;
        let p = preds.get(&id).ok_or_else(|| bad(&id, "no prediction line"))?.clone();
        pairs.push((id, p, t));
    }
    match task {
        EvalTask::Phase | EvalTask::Action | EvalTask::CvsCriterion => {
            let kind = match task {
                EvalTask::Phase => TaskKind::Phase,
                EvalTask::Action => TaskKind::Action,
                _ => TaskKind::CvsCriterion,
            };
            let recs = pairs
                .into_iter()
                .map(|(id, p, t)| match (p, t) {
                    (Some(RecordValue::Label(p)), RecordValue::Label(t)) => Ok(LabelRecord { id, pred: Some(p), truth: t }),
                    (None, RecordValue::Label(t)) => Ok(LabelRecord { id, pred: None, truth: t }),
                    _ => Err(bad(&id, "expected label strings")),
                })
                .collect::<Result<Vec<_>>>()?;
            classification_metrics(&recs, &classes_for(kind))
        }
        EvalTask::Triplet => {
            let recs = pairs
                .into_iter()
                .map(|(id, p, t)| {
                    let pred = match p {
                        None => Vec::new(),
                        Some(RecordValue::Set(s)) => s,
                        _ => return Err(bad(&id, "expected a list of triplet strings")),
                    };
                    match t {
                        RecordValue::Set(truth) => Ok(SetRecord { id, pred, truth }),
                        _ => Err(bad(&id, "expected a list of triplet strings")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            triplet_metrics(&recs, &TripletClasses::from_bundle(&ConstraintBundle::for_kind(TaskKind::Triplet)))
        }
        EvalTask::Cvs => {
            let recs = pairs
                .into_iter()
                .map(|(id, p, t)| match (p, t) {
                    (Some(RecordValue::Criteria(pred)), RecordValue::Criteria(truth)) => Ok(CvsRecord { id, pred, truth }),
                    _ => Err(bad(&id, "expected three criterion booleans")),
                })
                .collect::<Result<Vec<_>>>()?;
            cvs_scores(&recs, cvs_overall)
        }
        EvalTask::Localization => {
            let recs = pairs
                .into_iter()
                .map(|(id, p, t)| {
                    let pred = match p {
                        None => None,
                        Some(RecordValue::Box(b)) => Some(b),
                        _ => return Err(bad(&id, "expected a box")),
                    };
                    match t {
                        RecordValue::Box(truth) => Ok(BoxRecord { id, pred, truth }),
                        _ => Err(bad(&id, "expected a box")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            localization_metrics(&recs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_jsonl, Header};

    fn write(dir: &Path, name: &str, task: EvalTask, recs: &[PredictionRecord]) -> std::path::PathBuf {
        let p = dir.join(name);
        write_jsonl(&p, &Header::new(PREDICTION_SCHEMA).with("task", task.as_str()), recs).unwrap();
        p
    }

    fn r(id: &str, v: Option<RecordValue>) -> PredictionRecord {
        PredictionRecord { id: id.into(), value: v }
    }

    #[test]
    fn values_parse_by_shape() {
        let v: RecordValue = serde_json::from_str("\"Preparation\"").unwrap();
        assert_eq!(v, RecordValue::Label("Preparation".into()));
        let v: RecordValue = serde_json::from_str("[\"grasper retract gallbladder\"]").unwrap();
        assert!(matches!(v, RecordValue::Set(_)));
        let v: RecordValue = serde_json::from_str("[true,false,true]").unwrap();
        assert_eq!(v, RecordValue::Criteria(vec![true, false, true]));
        let v: RecordValue = serde_json::from_str("[1,2,3,4]").unwrap();
        assert!(matches!(v, RecordValue::Box(_)));
    }

    #[test]
    fn phase_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lab = |s: &str| Some(RecordValue::Label(s.into()));
        let t = write(dir.path(), "t.jsonl", EvalTask::Phase, &[r("a", lab("Preparation")), r("b", lab("Clipping Cutting"))]);
        let p = write(dir.path(), "p.jsonl", EvalTask::Phase, &[r("b", lab("clipping  cutting")), r("a", lab("Preparation"))]);
        let m = evaluate_files(EvalTask::Phase, &p, &t, CvsOverall::JointPool).unwrap();
        assert_eq!(m.get("accuracy"), Some(100.0));
    }

    #[test]
    fn missing_prediction_and_wrong_task_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let lab = |s: &str| Some(RecordValue::Label(s.into()));
        let t = write(dir.path(), "t.jsonl", EvalTask::Phase, &[r("a", lab("Preparation")), r("b", lab("Preparation"))]);
        let p = write(dir.path(), "p.jsonl", EvalTask::Phase, &[r("a", lab("Preparation"))]);
        assert!(matches!(evaluate_files(EvalTask::Phase, &p, &t, CvsOverall::JointPool), Err(LabError::BadRecord { id, .. }) if id == "b"));
        assert!(matches!(evaluate_files(EvalTask::Action, &t, &t, CvsOverall::JointPool), Err(LabError::Config(_))));
    }

    #[test]
    fn localization_null_prediction_scores_zero() {
        let dir = tempfile::tempdir().unwrap();
        let b = Some(RecordValue::Box(Bbox::new(0.0, 0.0, 2.0, 2.0).unwrap()));
        let t = write(dir.path(), "t.jsonl", EvalTask::Localization, &[r("a", b.clone()), r("b", b.clone())]);
        let p = write(dir.path(), "p.jsonl", EvalTask::Localization, &[r("a", b), r("b", None)]);
        let m = evaluate_files(EvalTask::Localization, &p, &t, CvsOverall::JointPool).unwrap();
        assert_eq!(m.get("miou"), Some(50.0));
    }

    #[test]
    fn unknown_task_name() {
        assert!(matches!("segmentation".parse::<EvalTask>(), Err(LabError::UnknownKind(_))));
        assert_eq!("cvs".parse::<EvalTask>().unwrap(), EvalTask::Cvs);
    }
}
