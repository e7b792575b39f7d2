//! Experiment driver: typed JSON configs, dispatch to `pam-core`, CSV/JSON
//! artifacts and a run manifest per output directory.

// `!(x > 0.0)` guards deliberately reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod config;
mod output;
mod report;
mod run;

use std::path::PathBuf;

use pam_core::PamError;
use thiserror::Error;

pub use output::{RunRecord, CONFIG_ECHO, MANIFEST};
pub use report::merge_runs;
pub use run::execute;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{command} (config {hash}): {source}")]
    Module {
        command: &'static str,
        hash: String,
        #[source]
        source: PamError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report: {0}")]
    Report(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Report(_) => EXIT_CONFIG,
            Self::Io { .. } => 1,
            Self::Module { source, .. } => match source {
                PamError::InvalidParameter { .. }
                | PamError::SizeMismatch { .. }
                | PamError::SnapshotParse(_)
                | PamError::WindowOutOfBox { .. }
                | PamError::BoxTooSmall(_)
                | PamError::InconsistentScaling { .. }
                | PamError::Regime { .. }
                | PamError::MissingData(_)
                | PamError::EmptyDomain
                | PamError::SingularSite { .. } => EXIT_CONFIG,
                PamError::Io(_) => 1,
                _ => EXIT_NUMERIC,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
