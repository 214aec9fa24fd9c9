use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("v_dd {v_dd} V outside BER table range [{min}, {max}] V")]
    Range { v_dd: f64, min: f64, max: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid layer {index}: {reason}")]
    Layer { index: usize, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn layer(index: usize, reason: impl Into<String>) -> Self {
        Error::Layer {
            index,
            reason: reason.into(),
        }
    }
}
