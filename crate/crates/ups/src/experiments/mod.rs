//! Named experiment presets, flat key=value configuration, the
//! tune/estimate pipeline, and CSV/JSON persistence for figures.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentName, GridChoice, PathVariant};
pub use output::{emit_figure_data, read_tuning, write_estimates, write_tuning};
pub use runner::{run_estimate, run_tune, AdaptedMoments, TuningArtifact};
