use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so the command-line front-end can map them onto
/// its exit codes (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error(
        "infeasible alignment: {target_len} labels with {repeats} adjacent repeats need at least {required} frames, got {frames}"
    )]
    InfeasibleAlignment {
        target_len: usize,
        repeats: usize,
        required: usize,
        frames: usize,
    },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("interface error: {0}")]
    Interface(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bundle version error: {0}")]
    Version(String),

    #[error("checksum mismatch in {section} section: expected {expected:016x}, found {found:016x}")]
    Checksum {
        section: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("malformed bundle: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 interface, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Interface(_) | Error::Vocabulary(_) => 3,
            Error::Numeric(_) | Error::InfeasibleAlignment { .. } => 4,
            _ => 1,
        }
    }
}
