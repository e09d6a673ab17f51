//! Evaluation metrics for the four task families: single-label
//! classification, triplet sets, CVS criteria and box localization.
//!
//! Every report value is a percentage in [0, 100].

mod classification;
mod cvs;
mod localization;
mod records;
mod triplet;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use classification::{classification_metrics, LabelRecord};
pub use cvs::{cvs_average, cvs_scores, CvsOverall, CvsRecord};
pub use localization::{iou, localization_metrics, Bbox, BoxRecord, COCO_THRESHOLDS};
pub use records::{evaluate_files, EvalTask, PredictionRecord, RecordValue, PREDICTION_SCHEMA};
pub use triplet::{triplet_metrics, SetRecord, TripletClasses};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Classification,
    Triplet,
    Cvs,
    Localization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub family: MetricFamily,
    pub records: usize,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    fn new(family: MetricFamily, records: usize) -> Self {
        Self {
            family,
            records,
            metrics: BTreeMap::new(),
        }
    }

    /// Stores `fraction` (in [0, 1]) as a percentage.
    fn put(&mut self, name: &str, fraction: f64) {
        self.metrics.insert(name.to_string(), 100.0 * fraction);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
