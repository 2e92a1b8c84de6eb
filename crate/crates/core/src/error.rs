use fanet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FanetError {
    /// Invalid configuration value; `key` is the dotted config path.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("config file: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("training diverged at step {step}: loss is {value}")]
    Divergence { step: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("image: {0}")]
    Image(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FanetError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        FanetError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = FanetError> = std::result::Result<T, E>;
