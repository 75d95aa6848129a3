//! Experiment harness for `iocrelax`: seeded benchmark and robustness
//! studies, result tables, and the self-verification suite behind the
//! `iocrelax` binary.

pub mod config;
pub mod harness;
pub mod table;
pub mod verify;

pub use config::{AnchorPolicy, ExperimentConfig, Robustness};
pub use harness::{run_benchmark, run_robustness, WORKERS_ENV};
pub use table::{emit_results, read_results, Format, ResultRow, ResultTable};
pub use verify::{run_verify, VerifyOptions, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] iocrelax::Error),

    #[error("malformed result file: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
