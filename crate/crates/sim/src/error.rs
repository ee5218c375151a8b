use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rollsim_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A malformed file. `line` is 1-based within the file.
    #[error("{}{}{}: {msg}", path.display(), line.map(|l| format!(", line {l}")).unwrap_or_default(), column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Schema { path: PathBuf, line: Option<u64>, column: Option<String>, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Artifacts that do not belong together, e.g. a checkpoint built for
    /// another planner or a report without its ground truth.
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn schema(path: &Path, msg: impl Into<String>) -> Self {
        Error::Schema { path: path.to_path_buf(), line: None, column: None, msg: msg.into() }
    }

    /// Stable tag for the machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::Mismatch(_) => "mismatch",
            Error::Check(_) => "check",
        }
    }
}
