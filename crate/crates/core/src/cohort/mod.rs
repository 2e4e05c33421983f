//! Raw cohort tables: schema, CSV ingestion, train/test splitting and the
//! seeded synthetic cohort generator.

mod csv_io;
mod schema;
mod split;
mod synth;

pub use csv_io::{load_dataset, read_dataset, write_dataset, write_dataset_to};
pub use schema::{Cell, FeatureKind, FeatureSchema, FeatureSpec, PatientRecord};
pub(crate) use split::ceil_count;
pub use split::{split_dataset, SplitIndices};
pub use synth::{generate_synthetic_cohort, synthetic_schema, RiskCoefficients, SyntheticConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("type mismatch at row {row}, column `{column}`")]
    TypeMismatch { row: usize, column: String },
    #[error("unknown category at row {row}, column `{column}`")]
    UnknownCategory { row: usize, column: String },
    #[error("invalid date at row {row}, column `{column}`")]
    InvalidDate { row: usize, column: String },
    #[error("outcome missing at row {row}")]
    MissingOutcome { row: usize },
    #[error("records ({records}) and outcomes ({outcomes}) differ in length")]
    LengthMismatch { records: usize, outcomes: usize },
    #[error("record {row} does not conform to the schema")]
    NonConforming { row: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// Raw tabular cohort with its binary outcome (`true` = failed healing).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    records: Vec<PatientRecord>,
    outcomes: Vec<bool>,
}

impl Dataset {
    /// Validates cell types against the schema. The outcome slot of every
    /// record is overwritten with the corresponding label.
    pub fn new(
        schema: FeatureSchema,
        mut records: Vec<PatientRecord>,
        outcomes: Vec<bool>,
    ) -> Result<Self, CohortError> {
        if records.len() != outcomes.len() {
            return Err(CohortError::LengthMismatch { records: records.len(), outcomes: outcomes.len() });
        }
        let oi = schema.outcome_index();
        for (row, (rec, &y)) in records.iter_mut().zip(&outcomes).enumerate() {
            if rec.values.len() != schema.len() {
                return Err(CohortError::NonConforming { row });
            }
            rec.values[oi] = Cell::Bool(y);
            if !rec.values.iter().zip(schema.features()).all(|(c, f)| c.conforms_to(f)) {
                return Err(CohortError::NonConforming { row });
            }
        }
        Ok(Self { schema, records, outcomes })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.outcomes.iter().filter(|&&y| y).count()
    }

    /// Fraction of failed-healing outcomes.
    pub fn incidence(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.len() as f64
    }

    /// Fraction of Missing cells among all predictor cells (the outcome is excluded).
    pub fn missing_fraction(&self) -> f64 {
        let cols: Vec<usize> = self.schema.predictor_indices().collect();
        let total = cols.len() * self.len();
        if total == 0 {
            return 0.0;
        }
        let missing = self
            .records
            .iter()
            .map(|r| cols.iter().filter(|&&c| r.values[c].is_missing()).count())
            .sum::<usize>();
        missing as f64 / total as f64
    }

    /// Rows at `indices`, in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
        }
    }

    /// Same records with replaced labels.
    pub fn with_outcomes(&self, outcomes: Vec<bool>) -> Result<Dataset, CohortError> {
        Dataset::new(self.schema.clone(), self.records.clone(), outcomes)
    }
}
