use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax error in {}: {message}", path.display())]
    Syntax { path: PathBuf, message: String },
    #[error("config error at '{key}': {message}")]
    Config { key: String, message: String },
    #[error("bad override: {0}")]
    Override(String),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("velocity file {}: {message}", path.display())]
    Velocity { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] shapeopt::Error),
    #[error("{failed} validation check(s) out of tolerance")]
    ValidationFailed { failed: usize },
}

impl CliError {
    /// 2 for tolerance failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ValidationFailed { .. } => 2,
            _ => 1,
        }
    }
}
