//! Config-driven experiment harness.
//!
//! [`run_experiment`] reads a TOML configuration, builds the model source,
//! sweeps the hyperparameter grid under every policy variant, and writes
//! pools (JSONL), reports (JSON and CSV), and a manifest that pins the
//! config hash and seeds so a re-run reproduces every artifact byte for
//! byte on local model sources.

mod config;
mod grid;
mod report;
mod run;

pub use config::{
    CheckerConfig, ExperimentConfig, ExtractorMode, ModelConfig, Problem, RunSettings,
    VariantConfig,
};
pub use grid::{evaluate_cell, grid_evaluate, CellParams, PolicyVariant};
pub use report::{compare_report, DeltaRow, DeltaTable, GridRow, Report};
pub use run::{load_problems, run_experiment, Manifest, PolicyFilter, RunOptions, PoolLine};

use crate::eval::EvalError;
use crate::model::ModelError;
use thiserror::Error;

/// Environment variable consulted for the remote model's bearer token.
pub const REMOTE_TOKEN_ENV: &str = "FIRE_REMOTE_TOKEN";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model source error: {0}")]
    Model(#[from] ModelError),
    #[error("checker error: {0}")]
    Checker(String),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 model source, 4 checker,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Model(_) => 3,
            ExperimentError::Checker(_) => 4,
            _ => 1,
        }
    }
}
