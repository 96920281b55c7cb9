//! Command implementations behind the `regpd` binary.

use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;

/// Relative output directories are resolved against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "REGPD_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 1 verification failure, 2 configuration or I/O error, 3 divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

/// Joins a relative `dir` onto the output root from the environment.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
