//! Metrics, reports, attention-map export and experiment drivers.

pub mod alignment;
pub mod experiment;
pub mod export;
pub mod metrics;
pub mod report;
pub mod runner;

pub use alignment::{cross_attention_map, eval_item_map, flat_start_map, flat_start_model};
pub use experiment::{run_experiment, train_variant, Budget, ExperimentName, ReportEntry, Variant};
pub use metrics::{
    alignment_diagonality, duration_diff, edit_distance, style_match, token_error_rate, AlignmentMap, FRAME_SECONDS,
};
pub use report::{Aggregate, ExampleRecord, MetricsReport};
pub use runner::{evaluate, evaluate_item, EvalOptions, StyleSpace};
