use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::grpo::GrpoConfig;
use crate::io::FORMAT_VERSION;
use crate::refine::RefineConfig;
use crate::reward::RewardConfig;
use crate::sft::SftConfig;
use crate::synth::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    pub label_sft: bool,
    pub cot_sft: bool,
    pub grpo: bool,
    pub refine: bool,
}

impl StageToggles {
    pub const ALL: StageToggles = StageToggles {
        label_sft: true,
        cot_sft: true,
        grpo: true,
        refine: true,
    };
    pub const NONE: StageToggles = StageToggles {
        label_sft: false,
        cot_sft: false,
        grpo: false,
        refine: false,
    };

    pub fn any(&self) -> bool {
        self.label_sft || self.cot_sft || self.grpo || self.refine
    }
}

impl Default for StageToggles {
    fn default() -> Self {
        Self::ALL
    }
}

/// Training and held-out sets. The training set is generated from the run
/// seed and the held-out set from `seed + eval_seed_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: TaskKind,
    pub train_size: usize,
    pub eval_size: usize,
    pub eval_seed_offset: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Phase,
            train_size: 1000,
            eval_size: 200,
            eval_seed_offset: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { embed: 32, hidden: 64 }
    }
}

/// Short SFT pass at the end of the cold start that mixes the teacher
/// traces with `answers_per_trace` copies of the bare answers, so sampled
/// outputs start mostly as bare answers and GRPO has structure to discover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub answers_per_trace: usize,
    pub sft: SftConfig,
}

impl Default for ReplaySpec {
    fn default() -> Self {
        Self {
            answers_per_trace: 9,
            sft: SftConfig {
                steps: 50,
                learning_rate: 0.1,
                final_learning_rate: None,
                batch_size: 32,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    /// Keep the cold-start teacher traces in every distillation set.
    pub include_cold_start_traces: bool,
    pub k_rollouts: usize,
    pub iterations: usize,
    pub distill: SftConfig,
}

impl Default for RefineSpec {
    fn default() -> Self {
        let d = RefineConfig::default();
        Self {
            include_cold_start_traces: true,
            k_rollouts: d.k_rollouts,
            iterations: d.iterations,
            distill: d.distill,
        }
    }
}

impl RefineSpec {
    pub fn loop_cfg(&self, max_output_len: usize) -> RefineConfig {
        RefineConfig {
            k_rollouts: self.k_rollouts,
            iterations: self.iterations,
            max_output_len,
            distill: self.distill,
        }
    }
}

/// Everything that determines a run. `out` and `init_checkpoint` locate
/// files and are excluded from the config hash; the initial checkpoint's
/// content is hashed instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    pub stages: StageToggles,
    pub dataset: DatasetSpec,
    pub policy: PolicySpec,
    pub label_sft: SftConfig,
    pub cot_sft: SftConfig,
    pub replay: ReplaySpec,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub refine: RefineSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 7,
            out: PathBuf::from("runs/demo"),
            init_checkpoint: None,
            stages: StageToggles::default(),
            dataset: DatasetSpec::default(),
            policy: PolicySpec::default(),
            label_sft: SftConfig {
                steps: 300,
                learning_rate: 1.0,
                final_learning_rate: None,
                batch_size: 32,
            },
            cot_sft: SftConfig {
                steps: 6000,
                learning_rate: 1.5,
                final_learning_rate: Some(0.02),
                batch_size: 32,
            },
            replay: ReplaySpec::default(),
            grpo: GrpoConfig {
                learning_rate: 0.006,
                batch_instances: 32,
                ..GrpoConfig::default()
            },
            reward: RewardConfig::default(),
            refine: RefineSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(LabError::Config(format!("unsupported format_version {}", self.format_version)));
        }
        if self.dataset.train_size == 0 || self.dataset.eval_size == 0 {
            return Err(LabError::Config("dataset sizes must be >= 1".into()));
        }
        if self.policy.embed == 0 || self.policy.hidden == 0 {
            return Err(LabError::Config("policy dims must be >= 1".into()));
        }
        for (name, s) in [("label_sft", &self.label_sft), ("cot_sft", &self.cot_sft), ("replay", &self.replay.sft), ("refine", &self.refine.distill)] {
            if s.batch_size == 0 || !(s.learning_rate >= 0.0) || !s.final_learning_rate.map_or(true, |r| r >= 0.0) {
                return Err(LabError::Config(format!("{name}: batch_size >= 1 and learning rates >= 0 required")));
            }
        }
        self.grpo.validate().map_err(as_config)?;
        self.reward.validate()?;
        self.refine.loop_cfg(self.grpo.max_output_len).validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form with file locations cleared,
    /// plus the bytes of the initial checkpoint when one is given.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.init_checkpoint = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canon)?);
        if let Some(p) = &self.init_checkpoint {
            let bytes = std::fs::read(p).map_err(|e| LabError::io(p, e))?;
            h.update(b"\ninit_checkpoint\n");
            h.update(bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

fn as_config(e: LabError) -> LabError {
    match e {
        LabError::Config(_) => e,
        other => LabError::Config(other.to_string()),
    }
}

/// Command-line overrides; set fields win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub group_size: Option<usize>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda_f: Option<f64>,
    pub lambda_a: Option<f64>,
    pub lambda_s: Option<f64>,
    pub structure_cutoff: Option<u64>,
    pub k_rollouts: Option<usize>,
    pub iterations: Option<usize>,
    pub entropy_focus: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src.clone() {
                    cfg.$($dst)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(out => out);
        set!(group_size => grpo.group_size);
        set!(tau => grpo.tau);
        set!(epsilon => grpo.epsilon);
        set!(lambda_f => reward.lambda_f);
        set!(lambda_a => reward.lambda_a);
        set!(lambda_s => reward.lambda_s);
        set!(structure_cutoff => reward.structure_cutoff_step);
        set!(k_rollouts => refine.k_rollouts);
        set!(iterations => refine.iterations);
        set!(entropy_focus => grpo.entropy_focus);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("[grpo]"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let text = RunConfig::default().to_toml();
        let e = RunConfig::from_toml(&text.replace("seed = 7", "seed = 7\nsed = 1")).unwrap_err();
        assert!(matches!(e, LabError::Config(_)));
        let e = RunConfig::from_toml(&text.replace("group_size = 8", "group_size = 1")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_win_and_move_the_hash() {
        let mut cfg = RunConfig::default();
        let h0 = cfg.hash().unwrap();
        Overrides {
            out: Some("elsewhere".into()),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.hash().unwrap(), h0, "output location is not part of the hash");
        Overrides {
            tau: Some(0.5),
            entropy_focus: Some(false),
            structure_cutoff: Some(10),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.grpo.tau, 0.5);
        assert!(!cfg.grpo.entropy_focus);
        assert_eq!(cfg.reward.structure_cutoff_step, 10);
        assert_ne!(cfg.hash().unwrap(), h0);
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }
}
