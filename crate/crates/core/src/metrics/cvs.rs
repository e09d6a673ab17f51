use serde::{Deserialize, Serialize};

use super::{ratio, MetricFamily, MetricReport};
use crate::error::{LabError, Result};

/// One frame: three binary criterion judgments and their truths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvsRecord {
    pub id: String,
    pub pred: Vec<bool>,
    pub truth: Vec<bool>,
}

/// How "overall" accuracy is pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvsOverall {
    /// Fraction of all criterion judgments that are correct.
    #[default]
    JointPool,
    /// Fraction of frames with all three criteria correct.
    FrameLevel,
}

/// Mean of three per-criterion accuracies, in the same units as the inputs.
pub fn cvs_average(per_criterion: [f64; 3]) -> f64 {
    per_criterion.iter().sum::<f64>() / 3.0
}

pub fn cvs_scores(records: &[CvsRecord], overall: CvsOverall) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(LabError::Empty("CVS records"));
    }
    let mut hits = [0usize; 3];
    let mut frames_all = 0;
    for r in records {
        if r.pred.len() != 3 || r.truth.len() != 3 {
            return Err(LabError::BadRecord {
                id: r.id.clone(),
                reason: format!("expected 3 criteria, got {} predicted and {} true", r.pred.len(), r.truth.len()),
            });
        }
        let ok: Vec<bool> = r.pred.iter().zip(&r.truth).map(|(p, t)| p == t).collect();
        for (h, &o) in hits.iter_mut().zip(&ok) {
            *h += o as usize;
        }
        frames_all += ok.iter().all(|&o| o) as usize;
    }
    let n = records.len();
    let per = hits.map(|h| ratio(h, n));
    let mut report = MetricReport::new(MetricFamily::Cvs, n);
    for (c, a) in per.iter().enumerate() {
        report.put(&format!("c{}", c + 1), *a);
    }
    report.put("avg", cvs_average(per));
    let pooled = match overall {
        CvsOverall::JointPool => ratio(hits.iter().sum(), 3 * n),
        CvsOverall::FrameLevel => ratio(frames_all, n),
    };
    report.put("overall", pooled);
    Ok(report)
}
