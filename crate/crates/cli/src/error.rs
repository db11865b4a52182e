use std::fmt;

/// Failure class, mapped to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, config keys or values, incompatible checkpoints.
    Config,
    /// Missing, corrupt or unreadable input data, failed downloads.
    Data,
    /// Anything that goes wrong after inputs were accepted.
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ErrorKind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Config => "configuration error",
            ErrorKind::Data => "data error",
            ErrorKind::Runtime => "error",
        };
        write!(f, "{kind}: {:#}", self.error)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Tags any error with a kind and a context line.
pub trait Tag<T> {
    fn tag(self, kind: ErrorKind, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn tag(self, kind: ErrorKind, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e.into().context(context())))
    }
}
