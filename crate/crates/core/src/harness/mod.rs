//! Experiment orchestration: configuration, the training loop that wires
//! controller, loss and optimizer together, baselines, trace output and plots.

pub mod config;
pub mod plot;
mod run;

pub use config::{
    apply_override, ControllerConfig, DatasetConfig, ExperimentConfig, MetricsConfig, Mode,
    ModelConfig, ReferenceConfig,
};
pub use plot::{emit_plots, Panel, Series};
pub use run::{
    build_controller, measure_reference_kl, run_experiment, tail_means, ReferenceKl, RunOutcome,
    RunSummary, TailMeans, Trainer, CONFIG_FILE, CONTROLLER_FILE, MODEL_FILE, SUMMARY_FILE,
    TRACE_FILE,
};
