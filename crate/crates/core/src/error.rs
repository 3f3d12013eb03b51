use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LfaError>;

#[derive(Debug, Error)]
pub enum LfaError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown ablation row `{name}`; valid rows: {valid}")]
    Lookup { name: String, valid: String },

    #[error("non-finite gradient in `{0}`; step rejected")]
    NonFiniteGradient(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("checkpoint {}: not a checkpoint file (bad magic)", path.display())]
    BadMagic { path: PathBuf },

    #[error("checkpoint {}: unsupported version {found} (expected {expected})", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {}: checksum mismatch (stored {stored:08x}, computed {computed:08x})", path.display())]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("checkpoint {}: truncated or malformed ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },
}

impl LfaError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        LfaError::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        LfaError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LfaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that originate in reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            LfaError::Io { .. }
                | LfaError::Image { .. }
                | LfaError::BadMagic { .. }
                | LfaError::Version { .. }
                | LfaError::Checksum { .. }
                | LfaError::Truncated { .. }
        )
    }
}
