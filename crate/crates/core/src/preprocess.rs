//! Encoding, imputation and standard scaling, fitted on training rows only.
//!
//! Booleans become 0/1 columns, categoricals one-hot blocks, multi-select
//! features one 0/1 column per category. Ordinals (level rank), intervals,
//! continuous values and dates (signed days since the record's fracture date)
//! are imputed with the training mean and then standardized with the
//! population standard deviation. Booleans and categoricals are imputed with
//! their training mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cell, Dataset, FeatureKind, FeatureSchema};
use crate::matrix::Matrix;

pub const TRANSFORMER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("unsupported transformer format version {0}")]
    UnsupportedVersion(u32),
}

/// Numeric source of a scaled column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum NumericSource {
    /// Rank of the level in schema order, 0-based.
    OrdinalRank { levels: Vec<String> },
    Number,
    /// Signed calendar days from the record's fracture date.
    DaysSinceFracture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum FeaturePlan {
    Boolean {
        feature: usize,
        impute: bool,
    },
    OneHot {
        feature: usize,
        categories: Vec<String>,
        impute: usize,
    },
    MultiHot {
        feature: usize,
        categories: Vec<String>,
        /// Most frequent observed selection.
        impute: Vec<bool>,
    },
    Scaled {
        feature: usize,
        #[serde(flatten)]
        source: NumericSource,
        impute: f64,
        mean: f64,
        std: f64,
        constant: bool,
    },
}

impl FeaturePlan {
    fn width(&self) -> usize {
        match self {
            FeaturePlan::Boolean { .. } | FeaturePlan::Scaled { .. } => 1,
            FeaturePlan::OneHot { categories, .. } | FeaturePlan::MultiHot { categories, .. } => categories.len(),
        }
    }
}

/// Immutable preprocessing state learned from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransformer {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub plans: Vec<FeaturePlan>,
    pub column_names: Vec<String>,
}

/// Fully numeric model input.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: Matrix,
    pub labels: Vec<bool>,
    pub column_names: Vec<String>,
    pub sample_weights: Vec<f64>,
    /// Categories seen at transform time that were absent from the fitted vocabulary.
    pub unseen_categories: usize,
}

impl DesignMatrix {
    pub fn new(values: Matrix, labels: Vec<bool>) -> Self {
        let n = values.rows();
        assert_eq!(labels.len(), n, "label count must match row count");
        let column_names = (0..values.cols()).map(|j| format!("x{j}")).collect();
        Self { values, labels, column_names, sample_weights: vec![1.0; n], unseen_categories: 0 }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.rows());
        self.sample_weights = weights;
        self
    }

    pub fn select_rows(&self, indices: &[usize]) -> DesignMatrix {
        DesignMatrix {
            values: self.values.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            column_names: self.column_names.clone(),
            sample_weights: indices.iter().map(|&i| self.sample_weights[i]).collect(),
            unseen_categories: 0,
        }
    }
}

fn days_since_fracture(cells: &[Cell], schema: &FeatureSchema, feature: usize) -> Option<f64> {
    match (&cells[feature], &cells[schema.fracture_date_index()]) {
        (Cell::Date(d), Cell::Date(f)) => Some((*d - *f).num_days() as f64),
        _ => None,
    }
}

fn numeric_value(source: &NumericSource, cells: &[Cell], schema: &FeatureSchema, feature: usize) -> Option<f64> {
    match (source, &cells[feature]) {
        (NumericSource::OrdinalRank { levels }, Cell::Category(c)) => {
            levels.iter().position(|l| l == c).map(|i| i as f64)
        }
        (NumericSource::Number, Cell::Number(x)) => Some(*x),
        (NumericSource::DaysSinceFracture, _) => days_since_fracture(cells, schema, feature),
        _ => None,
    }
}

/// Index of the largest count; ties resolve to the earliest position.
fn argmax_first(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Learn encodings, imputation values and scaling parameters from `train`.
pub fn fit_transformer(train: &Dataset) -> Result<FittedTransformer, PreprocessError> {
    if train.is_empty() {
        return Err(PreprocessError::EmptyDataset);
    }
    let schema = train.schema();
    let records = train.records();
    let mut plans = Vec::new();
    let mut column_names = Vec::new();

    for feature in schema.predictor_indices() {
        if feature == schema.fracture_date_index() {
            // The reference point of every day count; encodes to nothing.
            continue;
        }
        let spec = &schema.features()[feature];
        let all_missing = || PreprocessError::AllMissingColumn(spec.name.clone());
        let plan = match spec.kind {
            FeatureKind::Boolean => {
                let mut counts = [0usize; 2]; // [true, false]
                for r in records {
                    if let Cell::Bool(b) = r.values[feature] {
                        counts[usize::from(!b)] += 1;
                    }
                }
                if counts[0] + counts[1] == 0 {
                    return Err(all_missing());
                }
                // Most frequent value; a tie resolves to `true`.
                FeaturePlan::Boolean { feature, impute: counts[0] >= counts[1] }
            }
            FeatureKind::Categorical => {
                let mut counts = vec![0usize; spec.categories.len()];
                for r in records {
                    if let Cell::Category(c) = &r.values[feature] {
                        if let Some(i) = spec.category_index(c) {
                            counts[i] += 1;
                        }
                    }
                }
                if counts.iter().sum::<usize>() == 0 {
                    return Err(all_missing());
                }
                FeaturePlan::OneHot { feature, categories: spec.categories.clone(), impute: argmax_first(&counts) }
            }
            FeatureKind::MultiCategorical => {
                // Mode over whole selections. Ties go to the lexicographically
                // greatest mask in vocabulary order.
                let mut seen: Vec<(Vec<bool>, usize)> = Vec::new();
                for r in records {
                    if let Cell::CategorySet(set) = &r.values[feature] {
                        let mask: Vec<bool> = spec.categories.iter().map(|c| set.contains(c)).collect();
                        match seen.iter_mut().find(|(m, _)| *m == mask) {
                            Some((_, n)) => *n += 1,
                            None => seen.push((mask, 1)),
                        }
                    }
                }
                if seen.is_empty() {
                    return Err(all_missing());
                }
                seen.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| b.0.cmp(&a.0)));
                FeaturePlan::MultiHot { feature, categories: spec.categories.clone(), impute: seen.swap_remove(0).0 }
            }
            FeatureKind::Ordinal | FeatureKind::Interval | FeatureKind::Continuous | FeatureKind::Date => {
                let source = match spec.kind {
                    FeatureKind::Ordinal => NumericSource::OrdinalRank { levels: spec.levels.clone() },
                    FeatureKind::Date => NumericSource::DaysSinceFracture,
                    _ => NumericSource::Number,
                };
                let observed: Vec<f64> =
                    records.iter().filter_map(|r| numeric_value(&source, &r.values, schema, feature)).collect();
                if observed.is_empty() {
                    return Err(all_missing());
                }
                let (mean, std) = population_mean_std(&observed);
                FeaturePlan::Scaled { feature, source, impute: mean, mean, std, constant: std == 0.0 }
            }
        };
        match &plan {
            FeaturePlan::OneHot { categories, .. } | FeaturePlan::MultiHot { categories, .. } => {
                column_names.extend(categories.iter().map(|c| format!("{}={c}", spec.name)));
            }
            _ => column_names.push(spec.name.clone()),
        }
        plans.push(plan);
    }
    Ok(FittedTransformer { format_version: TRANSFORMER_FORMAT_VERSION, schema: schema.clone(), plans, column_names })
}

/// Mean and population (divisor n) standard deviation.
pub fn population_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl FittedTransformer {
    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let t: FittedTransformer =
            serde_json::from_str(text).map_err(|e| PreprocessError::SchemaMismatch(e.to_string()))?;
        if t.format_version != TRANSFORMER_FORMAT_VERSION {
            return Err(PreprocessError::UnsupportedVersion(t.format_version));
        }
        Ok(t)
    }

    fn check_schema(&self, other: &FeatureSchema) -> Result<(), PreprocessError> {
        let mine = &self.schema;
        if mine.len() != other.len()
            || mine.outcome_name() != other.outcome_name()
            || mine.fracture_date_name() != other.fracture_date_name()
        {
            return Err(PreprocessError::SchemaMismatch("feature set differs from fit time".into()));
        }
        for (a, b) in mine.features().iter().zip(other.features()) {
            if a.name != b.name || a.kind != b.kind {
                return Err(PreprocessError::SchemaMismatch(format!("feature `{}` differs from fit time", b.name)));
            }
        }
        Ok(())
    }

    /// Encode `data` with the fit-time statistics. Sample weights start at 1.
    pub fn transform(&self, data: &Dataset) -> Result<DesignMatrix, PreprocessError> {
        self.check_schema(data.schema())?;
        let schema = data.schema();
        let n = data.len();
        let d = self.width();
        let mut values = Matrix::zeros(n, d);
        let mut unseen = 0usize;
        for (i, rec) in data.records().iter().enumerate() {
            let row = values.row_mut(i);
            let mut col = 0;
            for plan in &self.plans {
                match plan {
                    FeaturePlan::Boolean { feature, impute } => {
                        let b = match rec.values[*feature] {
                            Cell::Bool(b) => b,
                            _ => *impute,
                        };
                        row[col] = if b { 1.0 } else { 0.0 };
                    }
                    FeaturePlan::OneHot { feature, categories, impute } => match &rec.values[*feature] {
                        Cell::Category(c) => match categories.iter().position(|k| k == c) {
                            Some(k) => row[col + k] = 1.0,
                            None => unseen += 1,
                        },
                        _ => row[col + impute] = 1.0,
                    },
                    FeaturePlan::MultiHot { feature, categories, impute } => match &rec.values[*feature] {
                        Cell::CategorySet(set) => {
                            for c in set {
                                match categories.iter().position(|k| k == c) {
                                    Some(k) => row[col + k] = 1.0,
                                    None => unseen += 1,
                                }
                            }
                        }
                        _ => {
                            for (k, &on) in impute.iter().enumerate() {
                                if on {
                                    row[col + k] = 1.0;
                                }
                            }
                        }
                    },
                    FeaturePlan::Scaled { feature, source, impute, mean, std, constant } => {
                        let x = numeric_value(source, &rec.values, schema, *feature).unwrap_or(*impute);
                        row[col] = if *constant { 0.0 } else { (x - mean) / std };
                    }
                }
                col += plan.width();
            }
        }
        if unseen > 0 {
            log::warn!("{unseen} unseen categories encoded as all-zero blocks");
        }
        Ok(DesignMatrix {
            values,
            labels: data.outcomes().to_vec(),
            column_names: self.column_names.clone(),
            sample_weights: vec![1.0; n],
            unseen_categories: unseen,
        })
    }
}

/// Weight every positive (failed-healing) sample by `#negatives / #positives`;
/// negatives keep weight 1.
pub fn compute_class_weights(labels: &[bool]) -> Result<Vec<f64>, PreprocessError> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(PreprocessError::SingleClass);
    }
    let w = neg as f64 / pos as f64;
    Ok(labels.iter().map(|&y| if y { w } else { 1.0 }).collect())
}
