//! Metrics, the inference harness, k-sweeps and ablation modes.

mod experiment;
mod inference;
mod metrics;

pub use experiment::{evaluate_mode, schedule_config, TrainedModels};
pub use inference::{
    example_likelihood, k_sweep, run_inference, AblationMode, ExampleSource, InferenceContext, InferenceReport,
    PredictionRecord, SweepRow,
};
pub use metrics::{atsc_accuracy, atsc_prediction, tuple_f1, Metrics};
