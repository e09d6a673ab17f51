use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{mean, ratio, MetricFamily, MetricReport};
use crate::error::{LabError, Result};
use crate::reward::normalize_answer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    /// `None` when no answer could be extracted; counts as a miss for the
    /// true class and as a prediction of no class.
    pub pred: Option<String>,
    pub truth: String,
}

/// Accuracy plus macro precision, recall and Jaccard over a declared class
/// list. Labels are matched after answer normalization.
///
/// Recall and Jaccard average over the classes that occur in the ground
/// truth. Precision also averages over classes that were predicted but never
/// occur in the ground truth; those contribute 0.
pub fn classification_metrics(records: &[LabelRecord], classes: &[String]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(LabError::Empty("classification records"));
    }
    let norm: Vec<String> = classes.iter().map(|c| normalize_answer(c)).collect();
    let class_of = |id: &str, label: &str| -> Result<usize> {
        let n = normalize_answer(label);
        norm.iter().position(|c| *c == n).ok_or_else(|| LabError::BadRecord {
            id: id.to_string(),
            reason: format!("label `{label}` is not a declared class"),
        })
    };
    let k = classes.len();
    let (mut tp, mut fp, mut fneg) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    let mut correct = 0;
    let mut in_truth = BTreeSet::new();
    let mut predicted = BTreeSet::new();
    for r in records {
        let p = r.pred.as_deref().map(|l| class_of(&r.id, l)).transpose()?;
        let t = class_of(&r.id, &r.truth)?;
        in_truth.insert(t);
        match p {
            Some(p) if p == t => {
                correct += 1;
                tp[t] += 1;
                predicted.insert(p);
            }
            Some(p) => {
                fp[p] += 1;
                fneg[t] += 1;
                predicted.insert(p);
            }
            None => fneg[t] += 1,
        }
    }
    let precision = |c: usize| ratio(tp[c], tp[c] + fp[c]);
    let recall = |c: usize| ratio(tp[c], tp[c] + fneg[c]);
    let jaccard = |c: usize| ratio(tp[c], tp[c] + fp[c] + fneg[c]);

    let precision_classes: Vec<f64> = in_truth.union(&predicted).map(|&c| precision(c)).collect();
    let recall_classes: Vec<f64> = in_truth.iter().map(|&c| recall(c)).collect();
    let jaccard_classes: Vec<f64> = in_truth.iter().map(|&c| jaccard(c)).collect();

    let mut report = MetricReport::new(MetricFamily::Classification, records.len());
    report.put("accuracy", ratio(correct, records.len()));
    report.put("macro_precision", mean(&precision_classes));
    report.put("macro_recall", mean(&recall_classes));
    report.put("macro_jaccard", mean(&jaccard_classes));
    Ok(report)
}
