use std::path::Path;

/// Command failure, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        Self::Data(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }

    pub fn write(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Runtime(format!("cannot write {}: {e}", path.display()))
    }
}

/// Fails with a message naming the missing file and the command producing it.
pub fn require(path: &Path, producer: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "missing {}: run `sessrec {producer}` first",
            path.display()
        )))
    }
}
