//! Experiment codes, run records, threshold metrics, ranking and curve export.

pub mod analysis;
pub mod curves;
pub mod experiment;
pub mod metrics;
pub mod ranking;
pub mod record;
pub mod suite;

pub use experiment::{threshold_consistency, Compute, ExperimentId, LayerSetting, ThresholdSpec};
pub use metrics::{delta_from_final, metric_triple, n_to_threshold, variance_after_threshold, MetricTriple};
pub use ranking::{frequency_table, rank_algorithms, AlgorithmScore, ExperimentRanking, FrequencyRow, TopList};
pub use record::{read_records, RunRecord};
pub use suite::{experiment_config, run_experiment_suite, run_single, SuiteSettings};

use crate::error::Result;

/// Threshold of an experiment given by its code.
pub fn threshold_for(experiment_id: &str) -> Result<ThresholdSpec> {
    Ok(experiment_id.parse::<ExperimentId>()?.threshold())
}
