//! Experiment harness: configuration, data loading and benchmark runners.

pub mod config;
pub mod explain;
pub mod ingest;
pub mod records;
pub mod runners;
pub mod synth;

pub use config::{BackendSpec, DataSource, ExperimentConfig, ExperimentKind, ExplainMethod};
pub use explain::run_explain;
pub use ingest::{load_csv, read_csv};
pub use records::{Check, OutputFormat, ResultRecord, RunReport};
pub use runners::{pd_timing_medians, run_benchmark, run_context_opt, run_pd_runtime, run_shap_error};
pub use synth::{synth_generate, synth_generate_with_flips, SynthData, SynthSpec, SynthTask};
