//! Synthetic surgical-style tasks and the scripted chain-of-thought teacher.
//!
//! Each instance hides a *scene* (a label plus the instrument, action and
//! tissue that explain it). The context vector carries a noisy ±1 codeword
//! for the scene on its first [`INFORMATIVE_DIMS`] coordinates and pure
//! noise on the rest, so the label is recoverable from context alone.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cot_format::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use crate::error::{LabError, Result};
use crate::seed;
use crate::vocab::{TokenId, Vocab, EOS};

pub const CONTEXT_DIM: usize = 24;
pub const INFORMATIVE_DIMS: usize = 8;
pub const CONTEXT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Phase,
    Triplet,
    Action,
    CvsCriterion,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Phase,
        TaskKind::Triplet,
        TaskKind::Action,
        TaskKind::CvsCriterion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Phase => "phase",
            TaskKind::Triplet => "triplet",
            TaskKind::Action => "action",
            TaskKind::CvsCriterion => "cvs_criterion",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LabError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub context: Vec<f64>,
    pub label: String,
    /// CVS criterion index (0..3) for `cvs_criterion` instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<u8>,
}

/// A named object with its appearance descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Descriptor {
    pub name: &'static str,
    pub appearance: &'static str,
}

const INSTRUMENTS: [Descriptor; 7] = [
    Descriptor { name: "grasper", appearance: "metallic silver jaws" },
    Descriptor { name: "hook", appearance: "L-shaped electrode tip" },
    Descriptor { name: "clipper", appearance: "clip applier jaws" },
    Descriptor { name: "scissors", appearance: "curved blades" },
    Descriptor { name: "bipolar", appearance: "two flat parallel jaws" },
    Descriptor { name: "irrigator", appearance: "hollow cylindrical tube" },
    Descriptor { name: "needle_driver", appearance: "robotic grasper jaws" },
];

const TISSUES: [Descriptor; 9] = [
    Descriptor { name: "gallbladder", appearance: "pear-shaped form" },
    Descriptor { name: "cystic_duct", appearance: "tubular structure" },
    Descriptor { name: "cystic_artery", appearance: "thin pulsatile vessel" },
    Descriptor { name: "liver", appearance: "reddish-brown surface" },
    Descriptor { name: "peritoneum", appearance: "thin translucent membrane" },
    Descriptor { name: "omentum", appearance: "surrounding fatty tissue" },
    Descriptor { name: "needle", appearance: "curved metallic body" },
    Descriptor { name: "tissue_edge", appearance: "pink mucosal edge" },
    Descriptor { name: "thread", appearance: "thread under tension" },
];

const VERBS: [&str; 14] = [
    "grasp", "retract", "dissect", "clip", "cut", "coagulate", "aspirate", "pack", "pick",
    "position", "push", "pull", "tie", "return",
];

/// (label, instrument, verb, target)
const PHASE_SCENES: [(&str, &str, &str, &str); 7] = [
    ("Preparation", "grasper", "grasp", "omentum"),
    ("Calot Triangle Dissection", "hook", "dissect", "cystic_duct"),
    ("Clipping Cutting", "clipper", "clip", "cystic_artery"),
    ("Gallbladder Dissection", "hook", "dissect", "gallbladder"),
    ("Gallbladder Packaging", "grasper", "pack", "gallbladder"),
    ("Cleaning Coagulation", "bipolar", "coagulate", "liver"),
    ("Gallbladder Retraction", "grasper", "retract", "gallbladder"),
];

const TRIPLET_SCENES: [(&str, &str, &str); 12] = [
    ("grasper", "retract", "gallbladder"),
    ("grasper", "grasp", "omentum"),
    ("grasper", "pack", "gallbladder"),
    ("hook", "dissect", "gallbladder"),
    ("hook", "dissect", "cystic_duct"),
    ("hook", "dissect", "peritoneum"),
    ("clipper", "clip", "cystic_duct"),
    ("clipper", "clip", "cystic_artery"),
    ("scissors", "cut", "cystic_duct"),
    ("scissors", "cut", "cystic_artery"),
    ("bipolar", "coagulate", "liver"),
    ("irrigator", "aspirate", "liver"),
];

const ACTION_SCENES: [(&str, &str, &str, &str); 8] = [
    ("picking-up the needle", "needle_driver", "pick", "needle"),
    ("positioning the needle tip", "needle_driver", "position", "needle"),
    ("pushing the needle through the tissue", "needle_driver", "push", "tissue_edge"),
    ("pulling the needle out of the tissue", "needle_driver", "pull", "needle"),
    ("tying a knot", "needle_driver", "tie", "thread"),
    ("cutting the suture", "scissors", "cut", "thread"),
    ("returning the needle", "needle_driver", "return", "needle"),
    ("holding the tissue", "grasper", "retract", "tissue_edge"),
];

pub const CVS_CRITERIA: [&str; 3] = ["two structures", "hepatocystic triangle", "cystic plate"];
pub const CVS_LABELS: [&str; 2] = ["achieved", "not achieved"];
const CVS_EVIDENCE: [&str; 2] = ["clear window", "intact tissue plane"];

const LEVEL_TOKENS: [&str; 3] = ["Level 1:", "Level 2:", "Level 3:"];
const SEPARATOR: &str = ".";
const CONCLUDE: &str = "indicates";

fn conclusion(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Phase => "workflow phase",
        TaskKind::Triplet => "tool-tissue interaction",
        TaskKind::Action => "surgical action",
        TaskKind::CvsCriterion => "safety criterion status",
    }
}

/// Hidden scene behind an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scene {
    pub label: String,
    pub level1: Vec<&'static str>,
    pub level2: Vec<&'static str>,
    pub criterion: Option<u8>,
}

/// Surgery-wise generation constraints for one task kind.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintBundle {
    pub kind: TaskKind,
    pub instruments: Vec<Descriptor>,
    pub tissues: Vec<Descriptor>,
    pub labels: Vec<String>,
    /// Allowed (instrument, verb, target) combinations.
    pub cooccurrence: Vec<(&'static str, &'static str, &'static str)>,
    pub scenes: Vec<Scene>,
}

/// Every verb the generator can place in a triplet.
pub fn verbs() -> &'static [&'static str] {
    &VERBS
}

fn appearance(table: &[Descriptor], name: &str) -> &'static str {
    table
        .iter()
        .find(|d| d.name == name)
        .map(|d| d.appearance)
        .unwrap_or_else(|| panic!("no descriptor for {name}"))
}

fn interaction_scene(label: String, i: &'static str, v: &'static str, t: &'static str) -> Scene {
    Scene {
        label,
        level1: vec![i, appearance(&INSTRUMENTS, i), t, appearance(&TISSUES, t)],
        level2: vec![i, v, t],
        criterion: None,
    }
}

fn cooccurrence_table() -> Vec<(&'static str, &'static str, &'static str)> {
    let mut table: Vec<_> = TRIPLET_SCENES.to_vec();
    let extra = PHASE_SCENES
        .iter()
        .map(|&(_, i, v, t)| (i, v, t))
        .chain(ACTION_SCENES.iter().map(|&(_, i, v, t)| (i, v, t)));
    for combo in extra {
        if !table.contains(&combo) {
            table.push(combo);
        }
    }
    table
}

impl ConstraintBundle {
    pub fn for_kind(kind: TaskKind) -> Self {
        let scenes: Vec<Scene> = match kind {
            TaskKind::Phase => PHASE_SCENES
                .iter()
                .map(|&(l, i, v, t)| interaction_scene(l.to_string(), i, v, t))
                .collect(),
            TaskKind::Triplet => TRIPLET_SCENES
                .iter()
                .map(|&(i, v, t)| interaction_scene(format!("{i} {v} {t}"), i, v, t))
                .collect(),
            TaskKind::Action => ACTION_SCENES
                .iter()
                .map(|&(l, i, v, t)| interaction_scene(l.to_string(), i, v, t))
                .collect(),
            TaskKind::CvsCriterion => (0..CVS_CRITERIA.len())
                .flat_map(|c| {
                    (0..CVS_LABELS.len()).map(move |a| Scene {
                        label: CVS_LABELS[a].to_string(),
                        level1: vec![
                            "liver",
                            appearance(&TISSUES, "liver"),
                            "gallbladder",
                            appearance(&TISSUES, "gallbladder"),
                        ],
                        level2: vec![CVS_CRITERIA[c], CVS_EVIDENCE[a]],
                        criterion: Some(c as u8),
                    })
                })
                .collect(),
        };
        let mut labels: Vec<String> = Vec::new();
        for s in &scenes {
            if !labels.contains(&s.label) {
                labels.push(s.label.clone());
            }
        }
        Self {
            kind,
            instruments: INSTRUMENTS.to_vec(),
            tissues: TISSUES.to_vec(),
            labels,
            cooccurrence: cooccurrence_table(),
            scenes,
        }
    }

    pub fn scene_for(&self, instance: &TaskInstance) -> Result<&Scene> {
        if instance.kind != self.kind {
            return Err(LabError::Config(format!(
                "instance {} is {} but bundle is {}",
                instance.id, instance.kind, self.kind
            )));
        }
        self.scenes
            .iter()
            .find(|s| s.label == instance.label && s.criterion == instance.criterion)
            .ok_or_else(|| LabError::LabelOutsideVocabulary {
                kind: self.kind.to_string(),
                label: instance.label.clone(),
            })
    }
}

/// Scenes of all kinds in a fixed global order; the position selects the
/// context codeword, so no two scenes of any kind share an encoding.
fn global_scene_offset(kind: TaskKind) -> usize {
    TaskKind::ALL
        .iter()
        .take_while(|&&k| k != kind)
        .map(|&k| ConstraintBundle::for_kind(k).scenes.len())
        .sum()
}

/// The 128 even-parity bytes in a fixed scrambled order: pairwise Hamming
/// distance of at least 2.
fn codewords() -> &'static [u8] {
    static WORDS: OnceLock<Vec<u8>> = OnceLock::new();
    WORDS.get_or_init(|| {
        let mut w: Vec<u8> = (0..=255u8).filter(|b| b.count_ones() % 2 == 0).collect();
        w.sort_by_key(|&b| seed::splitmix64(b as u64));
        w
    })
}

pub fn scene_code(kind: TaskKind, scene_index: usize) -> [f64; INFORMATIVE_DIMS] {
    let word = codewords()[global_scene_offset(kind) + scene_index];
    std::array::from_fn(|j| if word >> j & 1 == 1 { 1.0 } else { -1.0 })
}

/// Every token any scripted trace or bare answer can contain, plus `<eos>`.
pub fn standard_vocab() -> Vocab {
    let mut tokens: Vec<String> = Vec::new();
    let mut push = |t: &str| {
        if !tokens.iter().any(|x| x == t) {
            tokens.push(t.to_string());
        }
    };
    for t in [EOS, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE] {
        push(t);
    }
    LEVEL_TOKENS.iter().for_each(|t| push(t));
    push(SEPARATOR);
    push(CONCLUDE);
    for k in TaskKind::ALL {
        push(conclusion(k));
    }
    for (l, ..) in PHASE_SCENES {
        push(l);
    }
    for (l, ..) in ACTION_SCENES {
        push(l);
    }
    CVS_LABELS.iter().chain(&CVS_CRITERIA).chain(&CVS_EVIDENCE).for_each(|t| push(t));
    for d in INSTRUMENTS.iter().chain(&TISSUES) {
        push(d.name);
        push(d.appearance);
    }
    VERBS.iter().for_each(|t| push(t));
    Vocab::new(tokens).expect("standard vocabulary is well formed")
}

fn id_for(kind: TaskKind, seed: u64, index: usize) -> String {
    format!("{kind}-s{seed}-{index:06}")
}

fn context_for(kind: TaskKind, scene_index: usize, seed: u64, id: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, id, 0));
    let noise = Normal::new(0.0, CONTEXT_NOISE).expect("valid sigma");
    let distractor = Normal::new(0.0, 1.0).expect("valid sigma");
    let code = scene_code(kind, scene_index);
    let mut ctx = Vec::with_capacity(CONTEXT_DIM);
    ctx.extend(code.iter().map(|c| c + noise.sample(&mut rng)));
    ctx.extend((INFORMATIVE_DIMS..CONTEXT_DIM).map(|_| distractor.sample(&mut rng)));
    ctx
}

/// `n` instances with labels cycling through the kind's scenes from a
/// seed-dependent offset, so every class count is within one of n/|scenes|.
pub fn gen_dataset(seed: u64, kind: TaskKind, n: usize) -> Result<Vec<TaskInstance>> {
    if n == 0 {
        return Err(LabError::Empty("dataset size must be at least 1"));
    }
    let bundle = ConstraintBundle::for_kind(kind);
    let n_scenes = bundle.scenes.len();
    let offset = (seed::derive(seed, kind.as_str(), 0) % n_scenes as u64) as usize;
    Ok((0..n)
        .map(|i| {
            let scene_index = (i + offset) % n_scenes;
            let scene = &bundle.scenes[scene_index];
            let id = id_for(kind, seed, i);
            TaskInstance {
                context: context_for(kind, scene_index, seed, &id),
                id,
                kind,
                label: scene.label.clone(),
                criterion: scene.criterion,
            }
        })
        .collect())
}

fn trace_tokens(kind: TaskKind, scene: &Scene) -> Vec<&str> {
    let label = scene.label.as_str();
    let mut t = vec![THINK_OPEN, LEVEL_TOKENS[0]];
    t.extend(&scene.level1);
    t.extend([SEPARATOR, LEVEL_TOKENS[1]]);
    t.extend(&scene.level2);
    t.extend([SEPARATOR, LEVEL_TOKENS[2], CONCLUDE, conclusion(kind), THINK_CLOSE, ANSWER_OPEN, label, ANSWER_CLOSE]);
    t
}

/// Well-formed three-level trace for an instance: descriptors first,
/// relation second, conclusion and answer last.
pub fn scripted_teacher(instance: &TaskInstance, bundle: &ConstraintBundle) -> Result<String> {
    let scene = bundle.scene_for(instance)?;
    Ok(trace_tokens(bundle.kind, scene).join(" "))
}

/// Bare answer in answer tags, the target format of label-only SFT.
pub fn bare_answer(label: &str) -> String {
    format!("{ANSWER_OPEN} {label} {ANSWER_CLOSE}")
}

/// Token ids of `text` followed by `<eos>`.
pub fn encode_target(vocab: &Vocab, text: &str) -> Result<Vec<TokenId>> {
    let mut ids = vocab.tokenize(text).ok_or_else(|| LabError::BadRecord {
        id: text.chars().take(40).collect(),
        reason: "text is not expressible in the vocabulary".into(),
    })?;
    ids.push(vocab.eos());
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherTrace {
    pub id: String,
    pub trace: String,
}
