use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::cohort::CohortError;
use crate::compare::CompareError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::preprocess::PreprocessError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), message: err.to_string() }
    }

    /// Attach the pipeline stage in which the error occurred.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }

    /// Process exit code: 1 for user or configuration errors, 2 for data
    /// errors, 3 for internal or convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } => 2,
            Error::Cohort(CohortError::InvalidConfig(_)) => 1,
            Error::Cohort(_) | Error::Preprocess(_) => 2,
            Error::Model(ModelError::InvalidConfig(_)) => 1,
            Error::Model(ModelError::Diverged(_)) => 3,
            Error::Model(ModelError::Preprocess(_)) | Error::Model(ModelError::Artifact(_)) => 2,
            Error::Model(_) => 2,
            Error::Metrics(MetricsError::InvalidTarget(_)) => 1,
            Error::Metrics(_) => 2,
            Error::Compare(CompareError::InvalidPlan(_)) => 1,
            Error::Compare(_) => 2,
            Error::Calibration(CalibrationError::InvalidFraction(_)) => 1,
            Error::Calibration(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::from(CohortError::MissingOutcome { row: 1 }).exit_code(), 2);
        assert_eq!(Error::from(ModelError::Diverged("nan".into())).exit_code(), 3);
        assert_eq!(Error::from(ModelError::InvalidConfig("c".into())).in_stage("train").exit_code(), 1);
        let staged: Result<()> = Err(MetricsError::EmptyMatrix).stage("evaluate");
        let e = staged.unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().starts_with("evaluate: "));
    }
}
