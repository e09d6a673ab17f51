//! Three-part reward: format, answer match and Level-1 structure, with the
//! structure term switched off from a configured training step onwards.

use serde::{Deserialize, Serialize};

use crate::cot_format::CotTrace;
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub lambda_s: f64,
    pub structure_cutoff_step: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_a: 1.0,
            lambda_s: 1.0,
            structure_cutoff_step: 100,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_f", self.lambda_f),
            ("lambda_a", self.lambda_a),
            ("lambda_s", self.lambda_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LabError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Structure weight in effect at `step`.
    pub fn lambda_s_at(&self, step: u64) -> f64 {
        if step < self.structure_cutoff_step {
            self.lambda_s
        } else {
            0.0
        }
    }

    /// Largest total obtainable at `step`.
    pub fn max_total(&self, step: u64) -> f64 {
        self.lambda_f + self.lambda_a + self.lambda_s_at(step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_ind: bool,
    pub answer_ind: bool,
    pub structure_ind: bool,
    pub total: f64,
}

/// Canonical form used for answer comparison: trimmed, lowercased, inner
/// whitespace runs collapsed to one space.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn answers_match(answer: &str, label: &str) -> bool {
    normalize_answer(answer) == normalize_answer(label)
}

pub fn format_indicator(trace: &CotTrace) -> bool {
    trace.well_formed
}

pub fn answer_indicator(trace: &CotTrace, label: &str) -> bool {
    trace.answer().is_some_and(|a| answers_match(a, label))
}

pub fn structure_indicator(trace: &CotTrace) -> bool {
    trace.has_level1
}

pub fn composite_reward(trace: &CotTrace, label: &str, cfg: &RewardConfig, step: u64) -> RewardBreakdown {
    let format_ind = format_indicator(trace);
    let answer_ind = answer_indicator(trace, label);
    let structure_ind = structure_indicator(trace);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let total = cfg.lambda_f * ind(format_ind)
        + cfg.lambda_a * ind(answer_ind)
        + cfg.lambda_s_at(step) * ind(structure_ind);
    RewardBreakdown {
        format_ind,
        answer_ind,
        structure_ind,
        total,
    }
}
