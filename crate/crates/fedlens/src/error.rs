use std::path::PathBuf;

/// Errors surfaced by the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The experiment description is malformed or inconsistent. `field` is a
    /// dotted path such as `metrics.taps`.
    #[error("{}{field}: {msg}", if path.is_empty() { String::new() } else { format!("{path}: ") })]
    Config { path: String, field: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary file does not match its format.
    #[error("{}: byte {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: usize, msg: String },

    /// Training or metric evaluation failed.
    #[error(transparent)]
    Runtime(#[from] fedlens_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config { path: String::new(), field: field.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Attaches the config file name to a config error.
    pub fn in_file(self, file: &str) -> Self {
        match self {
            CliError::Config { field, msg, .. } => CliError::Config { path: file.to_string(), field, msg },
            other => other,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(fedlens_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
