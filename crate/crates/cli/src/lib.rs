//! Library surface of the command-line runner, reused by the
//! integration and acceptance tests.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    load_model, run_ablate, run_evaluate, run_generate, run_predict, run_train, run_weights,
};
pub use config::{DataPaths, RunConfig};
pub use manifest::{RunManifest, SplitMetrics};
