use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),

    /// Malformed binary or text input. `field` names the offending header field.
    #[error("{what}: bad {field}: {detail}")]
    Format {
        what: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config: missing required key `{0}`")]
    MissingKey(String),

    #[error("non-finite loss at step {step} (t = {t:.4}, static window = {static_window})")]
    NonFiniteLoss {
        step: u64,
        t: f64,
        static_window: bool,
    },

    #[error("audio underrun: need {required_s:.3} s ({required_samples} samples), have {available_s:.3} s ({available_samples} samples)")]
    AudioUnderrun {
        required_samples: usize,
        available_samples: usize,
        required_s: f64,
        available_s: f64,
    },

    #[error("checkpoint tensor mismatch: {0}")]
    TensorMismatch(String),
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(what: &'static str, field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            field,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
