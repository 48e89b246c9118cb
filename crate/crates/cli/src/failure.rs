use std::fmt;

use gender_audit::Error;

/// Exit status classes: 1 for bad input or configuration, 2 for failures
/// while running.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Failure::Validation(m) => Failure::Validation(format!("stage {stage} failed: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("stage {stage} failed: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::InfeasibleSplit(_)
            | Error::Planning(_)
            | Error::Architecture(_)
            | Error::Schema(_)
            | Error::Config(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
