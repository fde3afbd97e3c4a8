use std::fmt;
use std::path::Path;

/// Failure classes with stable exit codes for scripting.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration file, override or flag value (exit 2).
    Config(String),
    /// Unreadable, malformed or empty input data (exit 3).
    Data(String),
    /// An upstream stage has not produced its artifact yet (exit 4).
    Dependency(String),
    /// Anything else (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Dependency(_) => 4,
        }
    }

    /// Attach the offending path to an I/O failure.
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// `hint` names the producing command(s), e.g. "`fcesr explain`".
    pub fn missing(path: &Path, hint: &str) -> Self {
        CliError::Dependency(format!("{} not found; run {hint} first", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config error", m),
            CliError::Data(m) => ("data error", m),
            CliError::Dependency(m) => ("missing dependency", m),
            CliError::Runtime(m) => ("error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}

impl From<fcesr_core::Error> for CliError {
    fn from(e: fcesr_core::Error) -> Self {
        use fcesr_core::Error as E;
        match e {
            E::Unsupported(_) => CliError::Config(e.to_string()),
            E::Io(_)
            | E::Json(_)
            | E::Csv(_)
            | E::Parse { .. }
            | E::EmptyDataset(_)
            | E::Checkpoint(_)
            | E::InvalidArgument(_)
            | E::TooLong { .. } => CliError::Data(e.to_string()),
            E::IllegalState(_) | E::Numeric(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
