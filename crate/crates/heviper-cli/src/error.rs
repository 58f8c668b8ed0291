//! CLI error taxonomy mapped onto process exit codes.

use heviper_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("empty search space: {0}")]
    EmptySearchSpace(String),
}

impl CliError {
    /// 2 = config error, 3 = data error, 4 = empty search space.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::EmptySearchSpace(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::EmptySearchSpace => CliError::EmptySearchSpace(e.to_string()),
            _ if e.is_config() => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("manifest: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::EmptySearchSpace("x".into()).exit_code(), 4);
    }

    #[test]
    fn core_errors_classify() {
        let e: CliError = CoreError::EmptySearchSpace.into();
        assert_eq!(e.exit_code(), 4);
        let e: CliError = CoreError::InvalidGemPower(0.5).into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = CoreError::EmptyPool.into();
        assert_eq!(e.exit_code(), 3);
    }
}
