use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tclap_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}{}: {msg}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("gradient check failed: max relative error {max_rel_error:.3e} >= {threshold:.0e} at {worst}")]
    GradCheck {
        max_rel_error: f64,
        threshold: f64,
        worst: String,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, line: Option<usize>, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        use tclap_core::Error as C;
        match self {
            Self::Config(_) | Self::Core(C::InvalidConfig(_)) => 1,
            Self::Core(C::Numeric(_)) | Self::GradCheck { .. } => 3,
            Self::Core(_) | Self::Io { .. } | Self::Format { .. } => 2,
        }
    }
}
