//! Failure classes and the exit-code contract: 1 statistical, 2 I/O,
//! 3 configuration. Clap parse errors also map to 3 in main.

use std::fmt;

#[derive(Debug)]
pub enum Failure {
    /// The estimator or a test could not produce a result from valid inputs.
    Statistical(String),
    /// A file could not be read, written, or parsed.
    Io(String),
    /// Flags or option values are inconsistent.
    Config(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Statistical(_) => 1,
            Failure::Io(_) => 2,
            Failure::Config(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, what: impl fmt::Display) -> Self {
        Failure::Io(format!("{}: {what}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Statistical(m) => write!(f, "{m}"),
            Failure::Io(m) => write!(f, "{m}"),
            Failure::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<spheresar::Error> for Failure {
    fn from(e: spheresar::Error) -> Self {
        match e {
            spheresar::Error::InvalidArgument(m) => Failure::Config(m),
            other => Failure::Statistical(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
