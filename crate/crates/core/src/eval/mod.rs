//! Experiment runner: per-task metrics averaged over templates, then over
//! tasks; decoding-strategy and selection comparisons; ablations; and the
//! downstream adaptation workflow.

mod adaptation;
mod experiment;
mod harness;
mod report;

pub use adaptation::{
    check_disjoint, params_digest, run_adaptation, AdaptationOutcome, AdaptationSetup, Backbone, BaseInit, BaseScorer,
};
pub use experiment::{build_data, DataConfig, run_experiment, run_experiment_config, BackboneSpec, ExperimentConfig, ExperimentOutput, PretrainStage};
pub use harness::{
    default_systems, evaluate_systems, evaluate_task, pool_seed, EvalContext, FullPool, PoolCache, PoolChoice, ScorerRole,
    Selector, SystemMode, SystemUnderTest,
};
pub use report::{aggregate, Ablations, EvalReport, Fingerprint, MacroRow, MetricName, TaskMean, TaskResult};
