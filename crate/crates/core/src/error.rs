//! Crate-wide error type.

use crate::expr::{EvalError, ParseError};

/// Unified error for loading, validating, and solving an economy.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("in `{context}`: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },

    #[error("evaluating `{context}`: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },

    #[error("invalid economy: {0}")]
    InvalidEconomy(String),

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error("transfer-weight search did not converge: {0}")]
    NegishiDiverged(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Wrap an expression-evaluation failure with the name of the field
    /// being evaluated (`agents[0].entitlement`, `assets[1].dividend`, ...).
    pub fn eval(context: impl Into<String>, source: EvalError) -> Self {
        Error::Eval {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
