use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] glemiml::Error),

    /// An input file other than a dataset could not be read.
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }

    /// 1 for configuration problems, 2 for data problems, 3 for divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 1,
            CliError::Input { .. } => 2,
            CliError::Core(e) => match e {
                glemiml::Error::Config(_) => 1,
                glemiml::Error::Divergence { .. } | glemiml::Error::Numeric(_) => 3,
                _ => 2,
            },
        }
    }
}
