//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document (JSON syntax, unknown gate label, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally valid input violating a contract (index range,
    /// non-unitary matrix, inconsistent partition, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A dense-matrix operation was requested above its register cap.
    #[error("register too large: {qubits} qubits exceeds the dense cap of {cap}")]
    RegisterTooLarge { qubits: usize, cap: usize },

    /// The requested run would exceed the configured shot budget.
    #[error("shot budget exceeded: {required} shots required, cap is {cap}")]
    BudgetExceeded { required: u128, cap: u128 },

    /// A runtime simulation failure (zero-probability collapse, noise on a
    /// statevector without an unraveling RNG, ...).
    #[error("simulation error: {0}")]
    Simulation(String),

    /// An internal invariant was violated; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn simulation(msg: impl Into<String>) -> Self {
        Error::Simulation(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
