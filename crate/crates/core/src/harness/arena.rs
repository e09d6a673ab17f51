use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::io::FORMAT_VERSION;

/// The one score per task that enters the Arena mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    TripletAccuracy,
    Accuracy,
    OverallAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawTable {
    format_version: u32,
    tasks: BTreeMap<String, PrimaryMetric>,
    scores: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Per-model primary-metric scores (percent) over a declared task list.
/// Missing entries are allowed; a task without a score is simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct ArenaTable {
    tasks: BTreeMap<String, PrimaryMetric>,
    scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TryFrom<RawTable> for ArenaTable {
    type Error = LabError;
    fn try_from(raw: RawTable) -> Result<Self> {
        if raw.format_version != FORMAT_VERSION {
            return Err(LabError::Config(format!("unsupported arena format_version {}", raw.format_version)));
        }
        let mut t = ArenaTable::new(raw.tasks);
        for (model, row) in raw.scores {
            for (task, score) in row {
                t.insert(&model, &task, score)?;
            }
        }
        Ok(t)
    }
}

impl From<ArenaTable> for RawTable {
    fn from(t: ArenaTable) -> Self {
        RawTable {
            format_version: FORMAT_VERSION,
            tasks: t.tasks,
            scores: t.scores,
        }
    }
}

impl ArenaTable {
    pub fn new(tasks: BTreeMap<String, PrimaryMetric>) -> Self {
        Self {
            tasks,
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, model: &str, task: &str, score: f64) -> Result<()> {
        if !self.tasks.contains_key(task) {
            return Err(LabError::Config(format!("task `{task}` is not declared in the arena table")));
        }
        if !(0.0..=100.0).contains(&score) {
            return Err(LabError::Config(format!("{model}/{task}: score {score} outside [0, 100]")));
        }
        self.scores.entry(model.to_string()).or_default().insert(task.to_string(), score);
        Ok(())
    }

    pub fn remove(&mut self, model: &str, task: &str) -> Option<f64> {
        let row = self.scores.get_mut(model)?;
        let v = row.remove(task);
        if row.is_empty() {
            self.scores.remove(model);
        }
        v
    }

    pub fn tasks(&self) -> &BTreeMap<String, PrimaryMetric> {
        &self.tasks
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn scores(&self, model: &str) -> Option<&BTreeMap<String, f64>> {
        self.scores.get(model)
    }

    /// Every model with its Arena Score, best first (ties by name).
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .models()
            .map(|m| (m.to_string(), arena_score(self, m).expect("listed models have entries")))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

/// Mean of the model's available task scores.
pub fn arena_score(table: &ArenaTable, model: &str) -> Result<f64> {
    match table.scores.get(model) {
        Some(row) if !row.is_empty() => Ok(row.values().sum::<f64>() / row.len() as f64),
        _ => Err(LabError::UnknownModel(model.to_string())),
    }
}

/// One-decimal display form used in tables.
pub fn display_score(score: f64) -> String {
    format!("{score:.1}")
}

pub const OURS: &str = "Surg-R1";
pub const SURGICAL_BASELINE: &str = "Qwen2.5-VL-7B-Surg";

fn table(tasks: &[(&str, PrimaryMetric)], rows: &[(&str, &[f64])]) -> ArenaTable {
    let mut t = ArenaTable::new(tasks.iter().map(|(n, m)| (n.to_string(), *m)).collect());
    for (model, scores) in rows {
        for ((task, _), s) in tasks.iter().zip(scores.iter()) {
            t.insert(model, task, *s).expect("published scores are valid");
        }
    }
    t
}

/// Published primary metrics on the four public benchmarks.
pub fn published_public_table() -> ArenaTable {
    use PrimaryMetric::*;
    table(
        &[
            ("cholect50_triplet", TripletAccuracy),
            ("cholec80_phase", Accuracy),
            ("multibypass140_phase", Accuracy),
            ("sar_rarp50_action", Accuracy),
        ],
        &[(OURS, &[51.69, 80.90, 49.94, 48.10])],
    )
}

/// Published primary metrics on the six external validation sets.
pub fn published_external_table() -> ArenaTable {
    use PrimaryMetric::*;
    table(
        &[
            ("west_china_cvs", OverallAccuracy),
            ("nanfang_cvs", OverallAccuracy),
            ("renji_triplet", TripletAccuracy),
            ("renji_phase", Accuracy),
            ("strasbourg_phase", Accuracy),
            ("cuhk_action", Accuracy),
        ],
        &[
            (OURS, &[92.50, 87.36, 10.05, 57.66, 79.80, 32.92]),
            (SURGICAL_BASELINE, &[78.94, 80.46, 7.49, 20.74, 62.57, 19.15]),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_scores() {
        let p = published_public_table();
        assert!((arena_score(&p, OURS).unwrap() - 57.6575).abs() < 1e-9);
        assert_eq!(display_score(arena_score(&p, OURS).unwrap()), "57.7");
        let e = published_external_table();
        assert_eq!(display_score(arena_score(&e, OURS).unwrap()), "60.0");
        assert_eq!(display_score(arena_score(&e, SURGICAL_BASELINE).unwrap()), "44.9");
        assert_eq!(e.ranking()[0].0, OURS);
    }

    #[test]
    fn single_task_and_unknown_model() {
        let mut t = ArenaTable::new([("x".to_string(), PrimaryMetric::Accuracy)].into());
        t.insert("m", "x", 42.0).unwrap();
        assert_eq!(arena_score(&t, "m").unwrap(), 42.0);
        assert!(matches!(arena_score(&t, "nobody"), Err(LabError::UnknownModel(_))));
        assert!(t.insert("m", "y", 1.0).is_err());
        assert!(t.insert("m", "x", 100.5).is_err());
        t.remove("m", "x");
        assert!(arena_score(&t, "m").is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let t = published_external_table();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"format_version\":1"));
        assert_eq!(serde_json::from_str::<ArenaTable>(&s).unwrap(), t);
        let bad = s.replace("92.5", "192.5");
        assert!(serde_json::from_str::<ArenaTable>(&bad).is_err());
    }

    fn arb_table() -> impl Strategy<Value = ArenaTable> {
        proptest::collection::vec(proptest::collection::vec(proptest::option::of(0.0..=100.0f64), 4), 1..5).prop_map(|rows| {
            let mut t = ArenaTable::new((0..4).map(|i| (format!("t{i}"), PrimaryMetric::Accuracy)).collect());
            for (m, row) in rows.iter().enumerate() {
                for (i, s) in row.iter().enumerate() {
                    if let Some(s) = s {
                        t.insert(&format!("m{m}"), &format!("t{i}"), *s).unwrap();
                    }
                }
            }
            t
        })
    }

    proptest! {
        #[test]
        fn score_is_sum_over_count(t in arb_table()) {
            for m in t.models().map(str::to_string).collect::<Vec<_>>() {
                let row = t.scores(&m).unwrap();
                let mut sum = 0.0;
                let mut n = 0;
                for v in row.values() {
                    sum += v;
                    n += 1;
                }
                prop_assert!((arena_score(&t, &m).unwrap() - sum / n as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn deleting_a_task_only_moves_that_model(t in arb_table()) {
            let models: Vec<String> = t.models().map(str::to_string).collect();
            prop_assume!(!models.is_empty());
            let before: Vec<f64> = models.iter().map(|m| arena_score(&t, m).unwrap()).collect();
            let victim = &models[0];
            let task = t.scores(victim).unwrap().keys().next().unwrap().clone();
            let mut u = t.clone();
            u.remove(victim, &task);
            for (m, b) in models.iter().zip(&before).skip(1) {
                prop_assert_eq!(arena_score(&u, m).unwrap(), *b);
            }
        }
    }
}
