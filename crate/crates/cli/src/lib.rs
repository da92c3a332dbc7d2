//! Library side of the `metapop` command: configuration parsing, experiment
//! dispatch and output files.
//!
//! Each run writes `<dir>/<experiment>.json` and, for experiments that
//! produce tables or time series, `<dir>/<experiment>.csv`. Both embed the
//! resolved configuration and the master seed. The thread count is not part
//! of the configuration, and results do not depend on it.

pub mod config;
mod experiments;
pub mod output;

use std::path::PathBuf;

pub use config::{parse_str, parse_table, Experiment, RunConfig};
pub use experiments::run;

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] metapop::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Run(_) => 5,
        }
    }
}

/// What a finished run reports back to the shell.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// 0 on success; 1 for a not-ordered verdict, 2 for an inconclusive one.
    pub exit_code: u8,
    pub summary: String,
    pub files: Vec<PathBuf>,
}
