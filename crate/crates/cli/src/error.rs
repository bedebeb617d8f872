use std::path::Path;

use spinpol_core::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;
pub const EXIT_IO: i32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Precondition(_) => EXIT_PRECONDITION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }

    /// Core error raised while reading `path`; parse errors get `path:line`.
    pub fn in_file(path: &Path, e: Error) -> Self {
        match e {
            Error::Parse { line, message } => CliError::Parse(format!("{}:{line}: {message}", path.display())),
            other => {
                let mut c = CliError::from(other);
                match &mut c {
                    CliError::Usage(m)
                    | CliError::Parse(m)
                    | CliError::Precondition(m)
                    | CliError::Numerical(m)
                    | CliError::Io(m) => *m = format!("{}: {m}", path.display()),
                }
                c
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse { .. } => CliError::Parse(msg),
            Error::NonPositiveTemperature(_)
            | Error::InvalidParameter { .. }
            | Error::DivisionByZero(_)
            | Error::InconsistentPopulations { .. }
            | Error::DegenerateDarkState
            | Error::NegativeRate { .. }
            | Error::Precondition(_)
            | Error::BelowCalibrationFloor { .. }
            | Error::NoFeature
            | Error::MultipleFeatures(_) => CliError::Precondition(msg),
            Error::DegenerateNullspace { .. }
            | Error::Integration { .. }
            | Error::Unidentifiable { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateDecay
            | Error::NegativeTimeConstant(_) => CliError::Numerical(msg),
        }
    }
}
