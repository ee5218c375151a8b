use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of a function.
    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Stable, machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::State(_) => "state",
            Error::Diverged { .. } => "diverged",
            Error::UndefinedMetric(_) => "undefined_metric",
        }
    }
}
