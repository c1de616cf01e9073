use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// Exit 1: the scenario (or a flag) could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// Exit 2: parsed but rejected.
    #[error("validation failed: {0}")]
    Validation(String),
    /// Exit 3: the computation itself failed.
    #[error("runtime failure: {message}")]
    Runtime { message: String, x_max_suggested: Option<f64> },
    /// Exit 3: the command ran but some checks did not pass.
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime { .. } | CliError::ChecksFailed { .. } | CliError::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Runtime { .. } => "runtime",
            CliError::ChecksFailed { .. } => "checks_failed",
            CliError::Io(_) => "io",
        }
    }

    pub fn block(&self) -> ErrorBlock {
        let grid_hint = match self {
            CliError::Runtime { x_max_suggested: Some(x), .. } => Some(GridHint { x_max_suggested: *x }),
            _ => None,
        };
        ErrorBlock { kind: self.kind().into(), exit_code: self.exit_code(), message: self.to_string(), grid_hint }
    }
}

/// Core errors raised while a run is under way. Regime and argument errors
/// are validation failures; everything else is a runtime failure.
impl From<polykin::Error> for CliError {
    fn from(e: polykin::Error) -> Self {
        use polykin::Error as E;
        match e {
            E::Regime(_) | E::OutOfRange { .. } | E::InvalidArgument(_) | E::NegativeSize(_) | E::DimensionMismatch { .. } => {
                CliError::Validation(e.to_string())
            }
            E::Parse(_) => CliError::Parse(e.to_string()),
            E::LeakOverflow { x_max_suggested, .. } => {
                CliError::Runtime { message: e.to_string(), x_max_suggested: Some(x_max_suggested) }
            }
            _ => CliError::Runtime { message: e.to_string(), x_max_suggested: None },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHint {
    pub x_max_suggested: f64,
}

/// Machine-readable failure description embedded in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBlock {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_hint: Option<GridHint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leak_maps_to_runtime_with_hint() {
        let e: CliError =
            polykin::Error::LeakOverflow { t: 1.0, leaked: 1.0, allowed: 0.1, x_max_suggested: 20.0 }.into();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(e.block().grid_hint, Some(GridHint { x_max_suggested: 20.0 }));
    }

    #[test]
    fn codes() {
        assert_eq!(CliError::Parse("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(polykin::Error::Regime("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(polykin::Error::NoSignChange("x".into())).exit_code(), 3);
    }
}
