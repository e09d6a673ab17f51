//! Run orchestration: configuration, the staged training pipeline, and
//! Arena Score aggregation.

pub mod arena;
pub mod config;
pub mod pipeline;

pub use arena::{arena_score, display_score, published_external_table, published_public_table, ArenaTable, PrimaryMetric};
pub use config::{DatasetSpec, Overrides, PolicySpec, RefineSpec, ReplaySpec, RunConfig, StageToggles};
pub use pipeline::{
    datasets, policy_predictions, read_dataset, run_stage_pipeline, run_stage_pipeline_with, score_predictions, RunSummary,
    DATASET_SCHEMA,
};
