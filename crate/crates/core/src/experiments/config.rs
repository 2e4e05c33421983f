use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cohort::SyntheticConfig;
use crate::compare::ResamplePlan;
use crate::models::{ModelConfigs, ModelKind};
use crate::{Error, Result};

/// Where the cohort comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_cohort_size")]
        n: usize,
        #[serde(default)]
        generator: SyntheticConfig,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
}

fn default_cohort_size() -> usize {
    797
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { n: default_cohort_size(), generator: SyntheticConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of the cohort held out as the untouched test set.
    pub test_fraction: f64,
    /// Share of the training set reserved for threshold selection.
    pub holdout_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2, holdout_fraction: 0.2, stratified: true }
    }
}

/// How the decision threshold of each model is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Largest threshold keeping holdout sensitivity at or above the floor.
    SensitivityFloor(f64),
    /// Smallest threshold keeping holdout specificity at or above the floor.
    SpecificityFloor(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::SensitivityFloor(0.70)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub resamples: ResamplePlan,
    pub models: Vec<ModelKind>,
    pub threshold: f64,
    pub alpha: f64,
    /// Also compare this kind against a twin trained on permuted labels.
    pub shuffled_control: Option<ModelKind>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            resamples: ResamplePlan::default(),
            models: ModelKind::STUDY.to_vec(),
            threshold: 0.5,
            alpha: 0.05,
            shuffled_control: Some(ModelKind::Gbt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub threshold: f64,
    pub model: ModelKind,
    /// Fractions whose draw would have fewer rows are skipped.
    pub min_rows: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            repeats: 25,
            threshold: 0.26,
            model: ModelKind::Gbt,
            min_rows: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub frac: f64,
    pub robust_iters: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { frac: 2.0 / 3.0, robust_iters: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed from which every random stream is derived.
    pub seed: Option<u64>,
    pub data: DataSource,
    pub split: SplitConfig,
    pub models: ModelConfigs,
    pub threshold_policy: ThresholdPolicy,
    pub comparison: ComparisonConfig,
    pub ablation: AblationConfig,
    pub calibration: CalibrationConfig,
    pub output_dir: Option<PathBuf>,
}

fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read `path` (or start from defaults) and apply `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    /// SHA-256 of the compact JSON form of the resolved config.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("configs always serialize").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn master_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("no seed given: set `seed` in the config or pass --seed".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !unit_open(self.split.test_fraction) {
            return bad(format!("split.test_fraction {} outside (0, 1)", self.split.test_fraction));
        }
        if !unit_open(self.split.holdout_fraction) {
            return bad(format!("split.holdout_fraction {} outside (0, 1)", self.split.holdout_fraction));
        }
        match self.threshold_policy {
            ThresholdPolicy::Fixed(t) if !(0.0..=1.0).contains(&t) => {
                return bad(format!("fixed threshold {t} outside [0, 1]"));
            }
            ThresholdPolicy::SensitivityFloor(t) | ThresholdPolicy::SpecificityFloor(t) if !(0.0..=1.0).contains(&t) => {
                return bad(format!("threshold floor {t} outside [0, 1]"));
            }
            _ => {}
        }
        let c = &self.comparison;
        if c.resamples.count == 0 || !(c.resamples.fraction > 0.0 && c.resamples.fraction <= 1.0) {
            return bad("comparison.resamples needs count >= 1 and fraction in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&c.threshold) || !unit_open(c.alpha) {
            return bad("comparison.threshold must lie in [0, 1] and alpha in (0, 1)".into());
        }
        let a = &self.ablation;
        if a.fractions.is_empty() || a.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("ablation.fractions must be non-empty and lie in (0, 1]".into());
        }
        if a.repeats == 0 {
            return bad("ablation.repeats must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&a.threshold) {
            return bad(format!("ablation.threshold {} outside [0, 1]", a.threshold));
        }
        if !(self.calibration.frac > 0.0 && self.calibration.frac <= 1.0) {
            return bad(format!("calibration.frac {} outside (0, 1]", self.calibration.frac));
        }
        Ok(())
    }
}

/// Set the dotted `key` of a JSON document to `value`, parsed as JSON when
/// possible and as a plain string otherwise. Missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::Config(format!("`{}` is not an object", parts[..i].join("."))));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("keys have at least one segment")
}
