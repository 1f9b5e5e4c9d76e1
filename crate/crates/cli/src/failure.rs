//! Exit-code classification.

use std::fmt;
use std::process::ExitCode;

/// Bad config, missing input, malformed files.
pub const EXIT_INPUT: u8 = 2;
/// A numerical step failed on well-formed input.
pub const EXIT_NUMERIC: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            error,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = error
            .chain()
            .filter_map(|e| e.downcast_ref::<convo_core::Error>())
            .any(convo_core::Error::is_numerical);
        Failure {
            code: if numerical { EXIT_NUMERIC } else { EXIT_INPUT },
            error,
        }
    }
}

impl From<convo_core::Error> for Failure {
    fn from(e: convo_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}
