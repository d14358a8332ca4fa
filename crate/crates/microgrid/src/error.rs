use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario parse error at {path}:{line}: {message}")]
    ScenarioParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("thermal model misconfigured: {0}")]
    Thermal(String),
    #[error("storage dispatch infeasible: {0}")]
    StorageBounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("replay buffer: {0}")]
    Replay(String),
    #[error("simulator fault at step {step}: {message}")]
    SimulatorFault { step: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown {kind} \"{name}\"; available: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
