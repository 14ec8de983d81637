use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("capacity exceeded: requested {requested} positions but only {available} exist")]
    Capacity { requested: usize, available: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("refusing {rows}x{cols} input: direct DFT oracle is capped at {cap}x{cap}")]
    OracleTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("bad checkpoint magic: expected SSHCKPT1, found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("checkpoint truncated in section `{section}`: needed {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("w0 digest mismatch: checkpoint has {expected:#018x}, supplied weight hashes to {actual:#018x}")]
    DigestMismatch { expected: u64, actual: u64 },

    #[error("training diverged at epoch {epoch}: loss rose for {streak} consecutive epochs (last loss {loss})")]
    Diverged { epoch: usize, streak: usize, loss: f64 },

    #[error("unknown preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
