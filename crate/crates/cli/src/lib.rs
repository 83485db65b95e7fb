//! Driver for the icurisk pipeline: run configuration, stage orchestration
//! and atomic output handling. The `icurisk` binary is a thin clap wrapper.

pub mod config;
pub mod error;
pub mod output;
pub mod stages;

pub use config::RunConfig;
pub use error::CliError;
pub use stages::{run, run_stages, synth, SynthOptions};

/// Toolkit and model-format versions, as printed by `--version`.
pub fn version_string() -> String {
    format!(
        "icurisk {} (model format {} v{})",
        env!("CARGO_PKG_VERSION"),
        icurisk_core::model::MODEL_FORMAT,
        icurisk_core::model::MODEL_FORMAT_VERSION
    )
}
