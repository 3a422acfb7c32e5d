//! Harness around the blocked attention engine: mask generation, oracle
//! verification, timing and RCM reporting.

pub mod cli;
pub mod commands;
pub mod config;
pub mod inputs;
pub mod record;

pub use commands::{cmd_bench, cmd_gen_mask, cmd_rcm, cmd_stats, cmd_verify, with_threads};
pub use config::{BenchConfig, Precision};
pub use record::{BenchRecord, CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] blockmask::Error),
    #[error("n = {n} exceeds the {what} limit of {limit}")]
    SizeGuard { what: &'static str, n: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, BenchError>;
