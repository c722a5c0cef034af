use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SafeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SafeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("leakage guard tripped in stage `{stage}`: {detail}")]
    Leakage { stage: String, detail: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SafeError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl SafeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SafeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ SafeError::Stage { .. } => already,
            other => SafeError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 2 config error, 3 data error, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SafeError::Config(_) | SafeError::InvalidArgument(_) | SafeError::Toml(_) => 2,
            SafeError::Data(_)
            | SafeError::Io { .. }
            | SafeError::Csv(_)
            | SafeError::Json(_)
            | SafeError::Leakage { .. } => 3,
            SafeError::Numerical(_) => 4,
            SafeError::Stage { source, .. } => source.exit_code(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        assert_eq!(SafeError::Config("x".into()).exit_code(), 2);
        assert_eq!(SafeError::Data("x".into()).exit_code(), 3);
        assert_eq!(SafeError::Numerical("x".into()).exit_code(), 4);
        let wrapped = SafeError::Numerical("nan".into()).in_stage("mae");
        assert_eq!(wrapped.exit_code(), 4);
        assert!(wrapped.to_string().contains("mae"));
        // wrapping twice keeps the innermost stage
        let twice = wrapped.in_stage("pipeline");
        assert!(matches!(twice, SafeError::Stage { stage: "mae", .. }));
    }
}
