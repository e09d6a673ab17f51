//! Desk-scale reinforcement-learning laboratory for hierarchical
//! chain-of-thought reasoning on synthetic surgical-style tasks.
//!
//! The crate covers the full training pipeline (label SFT, chain-of-thought
//! cold start, GRPO with entropy-weighted token credit, and rejection-sampling
//! refinement with teacher distillation) on a toy autoregressive policy, plus
//! the evaluation metrics and Arena Score aggregation used to compare models.

pub mod cot_format;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod grpo;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod refine;
pub mod reward;
pub mod seed;
pub mod sft;
pub mod synth;
pub mod vocab;

pub use error::{LabError, Result};
pub use exec::ExecMode;
