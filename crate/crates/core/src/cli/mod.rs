//! Declarative run configs, run directories and engine dispatch.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, validate_config, ConfigErrors, ConfigIssue, EngineKind, RunConfig, SCHEMA_VERSION};
pub use output::{read_manifest, verify_run, RunDir, RunManifest, RunStatus, VerifyReport};
pub use run::{run, EngineError};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ENGINE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Engine(_) | CliError::Io { .. } => EXIT_ENGINE,
        }
    }
}
