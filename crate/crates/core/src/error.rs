use thiserror::Error;

/// Errors produced anywhere in the resonator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of a mathematical function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical procedure could not produce a result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The loop optimizer could not meet its target; the best design found is kept.
    #[error("design failure: residual {residual:.4} rad^2 exceeds {threshold} rad^2")]
    DesignFailure {
        residual: f64,
        threshold: f64,
        design: Box<crate::allpass::LoopDesign>,
    },

    /// A configuration would produce an unstable network.
    #[error("stability violation: {0}")]
    Stability(String),

    /// A configuration document is malformed or fails validation.
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("wave file error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }
}
