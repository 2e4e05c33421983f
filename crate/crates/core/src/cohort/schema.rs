use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::CohortError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Boolean,
    Categorical,
    /// Several categories may be selected at once (e.g. comorbidities).
    MultiCategorical,
    /// Ordered levels, encoded as their rank.
    Ordinal,
    /// Counts and other integer-like quantities.
    Interval,
    Continuous,
    Date,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Vocabulary of categorical and multi-categorical features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Ordinal levels, lowest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl FeatureSpec {
    pub fn boolean(name: &str) -> Self {
        Self::plain(name, FeatureKind::Boolean)
    }

    pub fn continuous(name: &str) -> Self {
        Self::plain(name, FeatureKind::Continuous)
    }

    pub fn interval(name: &str) -> Self {
        Self::plain(name, FeatureKind::Interval)
    }

    pub fn date(name: &str) -> Self {
        Self::plain(name, FeatureKind::Date)
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            categories: categories.iter().map(|s| s.to_string()).collect(),
            ..Self::plain(name, FeatureKind::Categorical)
        }
    }

    pub fn multi_categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            categories: categories.iter().map(|s| s.to_string()).collect(),
            ..Self::plain(name, FeatureKind::MultiCategorical)
        }
    }

    pub fn ordinal(name: &str, levels: &[&str]) -> Self {
        Self {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            ..Self::plain(name, FeatureKind::Ordinal)
        }
    }

    fn plain(name: &str, kind: FeatureKind) -> Self {
        Self { name: name.to_string(), kind, categories: Vec::new(), levels: Vec::new() }
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|c| c == name)
    }
}

/// Declarative description of the raw cohort table.
///
/// The outcome column is listed among `features` as a boolean; the fracture
/// date is the reference from which every other date is counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    outcome: usize,
    fracture_date: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    outcome: String,
    fracture_date: String,
    features: Vec<FeatureSpec>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = CohortError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        FeatureSchema::new(raw.features, &raw.outcome, &raw.fracture_date)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(s: FeatureSchema) -> Self {
        RawSchema {
            outcome: s.outcome_name().to_string(),
            fracture_date: s.fracture_date_name().to_string(),
            features: s.features,
        }
    }
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        outcome_name: &str,
        fracture_date_name: &str,
    ) -> Result<Self, CohortError> {
        let invalid = |msg: String| CohortError::InvalidSchema(msg);
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(invalid("empty feature name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(invalid(format!("duplicate feature name `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical | FeatureKind::MultiCategorical => {
                    if f.categories.is_empty() {
                        return Err(invalid(format!("`{}` has an empty vocabulary", f.name)));
                    }
                    let mut uniq = HashSet::new();
                    for c in &f.categories {
                        if c.is_empty() || c.contains(';') || !uniq.insert(c) {
                            return Err(invalid(format!("`{}` has an invalid category `{c}`", f.name)));
                        }
                    }
                }
                FeatureKind::Ordinal => {
                    if f.levels.is_empty() {
                        return Err(invalid(format!("`{}` has no ordinal levels", f.name)));
                    }
                    let uniq: HashSet<_> = f.levels.iter().collect();
                    if uniq.len() != f.levels.len() || f.levels.iter().any(String::is_empty) {
                        return Err(invalid(format!("`{}` has invalid ordinal levels", f.name)));
                    }
                }
                _ => {}
            }
        }
        let find = |name: &str| features.iter().position(|f| f.name == name);
        let outcome = find(outcome_name)
            .ok_or_else(|| invalid(format!("outcome `{outcome_name}` is not a feature")))?;
        let fracture_date = find(fracture_date_name)
            .ok_or_else(|| invalid(format!("fracture date `{fracture_date_name}` is not a feature")))?;
        if features[outcome].kind != FeatureKind::Boolean {
            return Err(invalid("outcome must be boolean".into()));
        }
        if features[fracture_date].kind != FeatureKind::Date {
            return Err(invalid("fracture date must have kind `date`".into()));
        }
        Ok(Self { features, outcome, fracture_date })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, CohortError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CohortError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CohortError::InvalidSchema(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn outcome_index(&self) -> usize {
        self.outcome
    }

    pub fn fracture_date_index(&self) -> usize {
        self.fracture_date
    }

    pub fn outcome_name(&self) -> &str {
        &self.features[self.outcome].name
    }

    pub fn fracture_date_name(&self) -> &str {
        &self.features[self.fracture_date].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Indices of every feature except the outcome.
    pub fn predictor_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.features.len()).filter(move |&i| i != self.outcome)
    }
}

/// One raw table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Bool(bool),
    Category(String),
    /// Selected categories, kept in vocabulary order without duplicates.
    CategorySet(Vec<String>),
    Number(f64),
    Date(NaiveDate),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Whether this cell is well-typed for `spec`.
    pub fn conforms_to(&self, spec: &FeatureSpec) -> bool {
        match (self, spec.kind) {
            (Cell::Missing, _) => true,
            (Cell::Bool(_), FeatureKind::Boolean) => true,
            (Cell::Category(c), FeatureKind::Categorical) => spec.category_index(c).is_some(),
            (Cell::Category(c), FeatureKind::Ordinal) => spec.level_index(c).is_some(),
            (Cell::CategorySet(set), FeatureKind::MultiCategorical) => {
                set.iter().all(|c| spec.category_index(c).is_some())
            }
            (Cell::Number(x), FeatureKind::Interval | FeatureKind::Continuous) => x.is_finite(),
            (Cell::Date(_), FeatureKind::Date) => true,
            _ => false,
        }
    }
}

/// A patient's raw cells, aligned with the schema's feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub values: Vec<Cell>,
}

impl PatientRecord {
    pub fn get<'a>(&'a self, schema: &FeatureSchema, name: &str) -> Option<&'a Cell> {
        schema.index_of(name).map(|i| &self.values[i])
    }
}
