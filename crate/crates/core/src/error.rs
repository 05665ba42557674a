use thiserror::Error;

/// Errors raised by the platoon library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlatoonError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Argument outside the domain of a potential (gap at or below zero).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("collision between agents {predecessor} and {follower}")]
    Collision { predecessor: usize, follower: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite state for agent {agent} at t = {t}")]
    Divergence { agent: usize, t: f64 },
    #[error("step halving exhausted for agent {agent} at t = {t} (gap {gap})")]
    Stiffness { agent: usize, t: f64, gap: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PlatoonError {
    fn from(e: std::io::Error) -> Self {
        PlatoonError::Io(e.to_string())
    }
}

impl From<csv::Error> for PlatoonError {
    fn from(e: csv::Error) -> Self {
        PlatoonError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for PlatoonError {
    fn from(e: serde_json::Error) -> Self {
        PlatoonError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PlatoonError>;
