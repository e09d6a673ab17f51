use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{mean, ratio, MetricFamily, MetricReport};
use crate::error::{LabError, Result};
use crate::synth::{verbs, ConstraintBundle};

/// One record of `instrument verb target` strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetRecord {
    pub id: String,
    pub pred: Vec<String>,
    pub truth: Vec<String>,
}

/// Declared class lists, one per component plus the full triplets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletClasses {
    pub instruments: Vec<String>,
    pub verbs: Vec<String>,
    pub targets: Vec<String>,
    pub triplets: Vec<String>,
}

impl TripletClasses {
    pub fn from_bundle(bundle: &ConstraintBundle) -> Self {
        Self {
            instruments: bundle.instruments.iter().map(|d| d.name.to_string()).collect(),
            verbs: verbs().iter().map(|v| v.to_string()).collect(),
            targets: bundle.tissues.iter().map(|d| d.name.to_string()).collect(),
            triplets: bundle.cooccurrence.iter().map(|(i, v, t)| format!("{i} {v} {t}")).collect(),
        }
    }

    fn lists(&self) -> [&[String]; 4] {
        [&self.instruments, &self.verbs, &self.targets, &self.triplets]
    }
}

type Triplet = [String; 3];

fn parse_triplet(id: &str, s: &str) -> Result<Triplet> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        [i, v, t] => Ok([i.to_string(), v.to_string(), t.to_string()]),
        _ => Err(LabError::BadRecord {
            id: id.to_string(),
            reason: format!("`{s}` is not an `instrument verb target` triplet"),
        }),
    }
}

/// The four views of a triplet set: instrument, verb and target sets, and
/// the set of whole triplets.
fn views(id: &str, items: &[String]) -> Result<[BTreeSet<String>; 4]> {
    let mut out: [BTreeSet<String>; 4] = Default::default();
    for s in items {
        let t = parse_triplet(id, s)?;
        out[3].insert(t.join(" "));
        for (c, part) in t.into_iter().enumerate() {
            out[c].insert(part);
        }
    }
    Ok(out)
}

/// Interpolated average precision of binary scores. Records are ranked by
/// score, ties broken by id; `None` when the class has no positives.
fn categorical_ap(ranked: &[(bool, bool)]) -> Option<f64> {
    let positives = ranked.iter().filter(|(_, pos)| *pos).count();
    if positives == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0;
    for (k, &(_, pos)) in ranked.iter().enumerate() {
        if pos {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let sum: f64 = ranked.iter().zip(&precision).filter(|((_, pos), _)| *pos).map(|(_, p)| p).sum();
    Some(sum / positives as f64)
}

const NAMES: [&str; 4] = ["instrument", "verb", "target", "triplet"];

/// Exact-set accuracies per component and for whole triplets, plus
/// categorical mAP with one-hot confidences, macro over declared classes
/// that occur in the ground truth.
pub fn triplet_metrics(records: &[SetRecord], classes: &TripletClasses) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(LabError::Empty("triplet records"));
    }
    let mut parsed = Vec::with_capacity(records.len());
    for r in records {
        let pred = views(&r.id, &r.pred)?;
        let truth = views(&r.id, &r.truth)?;
        for (c, list) in classes.lists().into_iter().enumerate() {
            if let Some(bad) = pred[c].iter().chain(&truth[c]).find(|x| !list.contains(x)) {
                return Err(LabError::BadRecord {
                    id: r.id.clone(),
                    reason: format!("{} `{bad}` is not a declared class", NAMES[c]),
                });
            }
        }
        parsed.push((r.id.as_str(), pred, truth));
    }
    parsed.sort_by(|a, b| a.0.cmp(b.0));

    let mut report = MetricReport::new(MetricFamily::Triplet, records.len());
    for (c, list) in classes.lists().into_iter().enumerate() {
        let hits = parsed.iter().filter(|(_, p, t)| p[c] == t[c]).count();
        report.put(&format!("{}_accuracy", NAMES[c]), ratio(hits, parsed.len()));

        let aps: Vec<f64> = list
            .iter()
            .filter_map(|class| {
                let mut ranked: Vec<(bool, bool)> =
                    parsed.iter().map(|(_, p, t)| (p[c].contains(class), t[c].contains(class))).collect();
                // stable: equal scores keep id order
                ranked.sort_by_key(|(score, _)| !score);
                categorical_ap(&ranked)
            })
            .collect();
        report.put(&format!("{}_map", NAMES[c]), mean(&aps));
    }
    Ok(report)
}
