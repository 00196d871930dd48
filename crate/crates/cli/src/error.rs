use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("design infeasible: best SIN {sin:e} at k = {k} is not above machine precision")]
    Infeasible { sin: f64, k: usize },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(cspapi::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible { .. } => 2,
            CliError::Io(_) => 3,
            CliError::Dimension(_) => 4,
            CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                cspapi::Error::Io(_) | cspapi::Error::Format { .. } | cspapi::Error::Json(_) => 3,
                cspapi::Error::DimensionMismatch { .. } => 4,
                _ => 1,
            },
        }
    }
}

impl From<cspapi::Error> for CliError {
    fn from(e: cspapi::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Infeasible { sin: 0.0, k: 4 }.exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 3);
        assert_eq!(CliError::Dimension("x".into()).exit_code(), 4);
        let core = cspapi::Error::DimensionMismatch {
            what: "rows",
            expected: 1,
            actual: 2,
        };
        assert_eq!(CliError::from(core).exit_code(), 4);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(cspapi::Error::from(io)).exit_code(), 3);
        assert_eq!(CliError::from(cspapi::Error::InvalidArgument("x".into())).exit_code(), 1);
    }
}
