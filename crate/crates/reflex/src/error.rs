use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An intermediate quantity became non-finite (exploding integration,
    /// degenerate geometry). Episodes that hit this are reported as faulted,
    /// never silently clamped.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// Scenario generation could not produce a feasible scene.
    #[error("scenario generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    /// A policy failed internally while planning.
    #[error("policy fault: {0}")]
    Policy(String),

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
