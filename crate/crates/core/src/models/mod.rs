//! Probability classifiers and the versioned model artifact that bundles a
//! fitted transformer with a trained classifier.

pub mod gbt;
pub mod logistic;
pub mod svm;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Dataset;
use crate::matrix::Matrix;
use crate::preprocess::{compute_class_weights, fit_transformer, FittedTransformer, PreprocessError};

pub use gbt::{train_gbt, GbtConfig, GbtModel, Node, RegressionTree};
pub use logistic::{train_logistic, LinearModel, LogisticConfig};
pub use svm::{fit_platt, train_svm, Kernel, KernelKind, PlattParams, SvmConfig, SvmModel};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("need at least 2 rows to train, got {0}")]
    TooFewRows(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel parameter gamma resolved to {0}, which is not a positive finite number")]
    DegenerateKernel(f64),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("model artifact: {0}")]
    Artifact(String),
}

pub(crate) fn require_both_classes(labels: &[bool]) -> Result<(), ModelError> {
    if labels.len() < 2 {
        return Err(ModelError::TooFewRows(labels.len()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Svm,
    Gbt,
    /// Predicts the same probability for every row.
    Constant,
}

impl ModelKind {
    /// The three classifiers compared in the study.
    pub const STUDY: [ModelKind; 3] = [ModelKind::Logistic, ModelKind::Svm, ModelKind::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Svm => "svm",
            ModelKind::Gbt => "gbt",
            ModelKind::Constant => "constant",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "svm" => Ok(ModelKind::Svm),
            "gbt" => Ok(ModelKind::Gbt),
            "constant" => Ok(ModelKind::Constant),
            other => Err(ModelError::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Hyperparameters of every model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfigs {
    pub logistic: LogisticConfig,
    pub svm: SvmConfig,
    pub gbt: GbtConfig,
    /// Output of the constant predictor.
    pub constant_probability: f64,
}

impl Default for ModelConfigs {
    fn default() -> Self {
        Self {
            logistic: LogisticConfig::default(),
            svm: SvmConfig::default(),
            gbt: GbtConfig::default(),
            constant_probability: 0.5,
        }
    }
}

impl ModelConfigs {
    pub fn class_weighting(&self, kind: ModelKind) -> bool {
        match kind {
            ModelKind::Logistic => self.logistic.class_weighting,
            ModelKind::Svm => self.svm.class_weighting,
            ModelKind::Gbt => self.gbt.class_weighting,
            ModelKind::Constant => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbabilityClassifier {
    Logistic(LinearModel),
    Svm(SvmModel),
    Gbt(GbtModel),
    Constant { probability: f64 },
}

impl ProbabilityClassifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            ProbabilityClassifier::Logistic(_) => ModelKind::Logistic,
            ProbabilityClassifier::Svm(_) => ModelKind::Svm,
            ProbabilityClassifier::Gbt(_) => ModelKind::Gbt,
            ProbabilityClassifier::Constant { .. } => ModelKind::Constant,
        }
    }

    /// Train `kind` on an encoded matrix, using its sample weights as given.
    pub fn train(
        kind: ModelKind,
        x: &crate::preprocess::DesignMatrix,
        configs: &ModelConfigs,
    ) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Logistic => ProbabilityClassifier::Logistic(train_logistic(x, &configs.logistic)?),
            ModelKind::Svm => ProbabilityClassifier::Svm(train_svm(x, &configs.svm)?),
            ModelKind::Gbt => ProbabilityClassifier::Gbt(train_gbt(x, &configs.gbt)?),
            ModelKind::Constant => {
                let p = configs.constant_probability;
                if !(0.0..=1.0).contains(&p) {
                    return Err(ModelError::InvalidConfig(format!("constant probability {p} outside [0, 1]")));
                }
                ProbabilityClassifier::Constant { probability: p }
            }
        })
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        match self {
            ProbabilityClassifier::Logistic(m) => m.predict_proba(x),
            ProbabilityClassifier::Svm(m) => m.predict_proba(x),
            ProbabilityClassifier::Gbt(m) => m.predict_proba(x),
            ProbabilityClassifier::Constant { probability } => Ok(vec![*probability; x.rows()]),
        }
    }
}

/// Transformer plus classifier: everything needed to score raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: ModelKind,
    pub transformer: FittedTransformer,
    pub classifier: ProbabilityClassifier,
}

impl ModelArtifact {
    /// Fit the transformer on `train`, weight classes if the kind's config asks
    /// for it (ratio computed on `train` itself) and train the classifier.
    pub fn fit(train: &Dataset, kind: ModelKind, configs: &ModelConfigs) -> Result<Self, ModelError> {
        let transformer = fit_transformer(train)?;
        let mut x = transformer.transform(train)?;
        if configs.class_weighting(kind) {
            let w = compute_class_weights(&x.labels)?;
            x = x.with_weights(w);
        }
        let classifier = ProbabilityClassifier::train(kind, &x, configs)?;
        Ok(Self { format_version: ARTIFACT_FORMAT_VERSION, kind, transformer, classifier })
    }

    pub fn predict_proba(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let x = self.transformer.transform(data)?;
        self.classifier.predict_proba(&x.values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model artifacts always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let artifact: ModelArtifact = serde_json::from_str(text).map_err(|e| ModelError::Artifact(e.to_string()))?;
        if artifact.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::Artifact(format!("unsupported format version {}", artifact.format_version)));
        }
        if artifact.transformer.format_version != crate::preprocess::TRANSFORMER_FORMAT_VERSION {
            return Err(PreprocessError::UnsupportedVersion(artifact.transformer.format_version).into());
        }
        if artifact.classifier.kind() != artifact.kind {
            return Err(ModelError::Artifact("classifier does not match the declared kind".into()));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Artifact(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Artifact(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, SyntheticConfig};

    #[test]
    fn both_classes_required() {
        assert_eq!(require_both_classes(&[true]), Err(ModelError::TooFewRows(1)));
        assert_eq!(require_both_classes(&[false, false]), Err(ModelError::SingleClass));
        assert!(require_both_classes(&[true, false]).is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [ModelKind::Logistic, ModelKind::Svm, ModelKind::Gbt, ModelKind::Constant] {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
            assert_eq!(serde_json::to_string(&kind).unwrap(), format!("\"{}\"", kind.name()));
        }
        assert!("forest".parse::<ModelKind>().is_err());
    }

    #[test]
    fn artifacts_round_trip_and_reproduce_predictions() {
        let (data, _) = generate_synthetic_cohort(120, 3, &SyntheticConfig::default()).unwrap();
        let configs = ModelConfigs {
            gbt: GbtConfig { n_rounds: 5, ..Default::default() },
            ..Default::default()
        };
        for kind in [ModelKind::Logistic, ModelKind::Svm, ModelKind::Gbt, ModelKind::Constant] {
            let artifact = ModelArtifact::fit(&data, kind, &configs).unwrap();
            let back = ModelArtifact::from_json(&artifact.to_json()).unwrap();
            assert_eq!(back.to_json(), artifact.to_json());
            let p = artifact.predict_proba(&data).unwrap();
            assert_eq!(p, back.predict_proba(&data).unwrap());
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mismatched_kind_is_rejected() {
        let (data, _) = generate_synthetic_cohort(60, 4, &SyntheticConfig::default()).unwrap();
        let artifact = ModelArtifact::fit(&data, ModelKind::Constant, &ModelConfigs::default()).unwrap();
        let text = artifact.to_json().replacen("\"kind\": \"constant\"", "\"kind\": \"gbt\"", 1);
        assert!(matches!(ModelArtifact::from_json(&text), Err(ModelError::Artifact(_))));
    }
}
