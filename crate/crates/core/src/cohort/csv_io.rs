use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{Cell, CohortError, Dataset, FeatureKind, FeatureSchema, FeatureSpec, PatientRecord};

/// Literal for an explicitly empty multi-select (no category chosen). An
/// empty cell means Missing.
pub const EMPTY_SELECTION: &str = ";";

const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset, CohortError> {
    let file = std::fs::File::open(path).map_err(|e| CohortError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file, schema)
}

/// Parse a cohort CSV. Header names must match the schema up to order.
pub fn read_dataset<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::None).from_reader(reader);
    let header = rdr.headers().map_err(|e| CohortError::Csv(e.to_string()))?.clone();

    // column position in file -> feature index
    let mut mapping = Vec::with_capacity(header.len());
    let mut seen = vec![false; schema.len()];
    for name in header.iter() {
        let idx = schema.index_of(name).ok_or_else(|| CohortError::UnknownColumn(name.to_string()))?;
        if seen[idx] {
            return Err(CohortError::Csv(format!("duplicate column `{name}`")));
        }
        seen[idx] = true;
        mapping.push(idx);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CohortError::MissingColumn(schema.features()[missing].name.clone()));
    }

    let oi = schema.outcome_index();
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result.map_err(|e| CohortError::Csv(e.to_string()))?;
        let mut values = vec![Cell::Missing; schema.len()];
        for (pos, raw) in rec.iter().enumerate() {
            let fi = mapping[pos];
            values[fi] = parse_cell(raw, &schema.features()[fi], row)?;
        }
        let y = match values[oi] {
            Cell::Bool(y) => y,
            _ => return Err(CohortError::MissingOutcome { row }),
        };
        records.push(PatientRecord { values });
        outcomes.push(y);
    }
    Dataset::new(schema.clone(), records, outcomes)
}

fn parse_cell(raw: &str, spec: &FeatureSpec, row: usize) -> Result<Cell, CohortError> {
    if raw.is_empty() {
        return Ok(Cell::Missing);
    }
    let column = || spec.name.clone();
    let mismatch = || CohortError::TypeMismatch { row, column: column() };
    let unknown = || CohortError::UnknownCategory { row, column: column() };
    match spec.kind {
        FeatureKind::Boolean => match raw.trim().to_ascii_lowercase().as_str() {
            "1" | "true" => Ok(Cell::Bool(true)),
            "0" | "false" => Ok(Cell::Bool(false)),
            _ => Err(mismatch()),
        },
        FeatureKind::Categorical => {
            spec.category_index(raw).ok_or_else(unknown)?;
            Ok(Cell::Category(raw.to_string()))
        }
        FeatureKind::Ordinal => {
            spec.level_index(raw).ok_or_else(unknown)?;
            Ok(Cell::Category(raw.to_string()))
        }
        FeatureKind::MultiCategorical => {
            let mut selected = vec![false; spec.categories.len()];
            if raw != EMPTY_SELECTION {
                for part in raw.split(';') {
                    let idx = spec.category_index(part.trim()).ok_or_else(unknown)?;
                    selected[idx] = true;
                }
            }
            let set = spec
                .categories
                .iter()
                .zip(&selected)
                .filter(|(_, &s)| s)
                .map(|(c, _)| c.clone())
                .collect();
            Ok(Cell::CategorySet(set))
        }
        FeatureKind::Interval | FeatureKind::Continuous => {
            let x: f64 = raw.trim().parse().map_err(|_| mismatch())?;
            if x.is_finite() {
                Ok(Cell::Number(x))
            } else {
                Err(mismatch())
            }
        }
        FeatureKind::Date => NaiveDate::parse_from_str(raw.trim(), DATE_FORMAT)
            .map(Cell::Date)
            .map_err(|_| CohortError::InvalidDate { row, column: column() }),
    }
}

fn format_cell(cell: &Cell) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::Bool(b) => if *b { "1" } else { "0" }.to_string(),
        Cell::Category(c) => c.clone(),
        Cell::CategorySet(set) if set.is_empty() => EMPTY_SELECTION.to_string(),
        Cell::CategorySet(set) => set.join(";"),
        // `Display` for f64 is the shortest string that parses back to the same value.
        Cell::Number(x) => format!("{x}"),
        Cell::Date(d) => d.format(DATE_FORMAT).to_string(),
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), CohortError> {
    let file = std::fs::File::create(path).map_err(|e| CohortError::Io(format!("{}: {e}", path.display())))?;
    write_dataset_to(file, dataset)
}

/// Write in schema column order.
pub fn write_dataset_to<W: Write>(writer: W, dataset: &Dataset) -> Result<(), CohortError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let err = |e: csv::Error| CohortError::Csv(e.to_string());
    w.write_record(dataset.schema().features().iter().map(|f| f.name.as_str())).map_err(err)?;
    for rec in dataset.records() {
        w.write_record(rec.values.iter().map(format_cell)).map_err(err)?;
    }
    w.flush().map_err(|e| CohortError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::boolean("failed"),
                FeatureSpec::date("fracture_date"),
                FeatureSpec::continuous("crp"),
                FeatureSpec::boolean("smoker"),
                FeatureSpec::multi_categorical("comorbidities", &["diabetes", "lung_disease", "renal"]),
                FeatureSpec::ordinal("weber", &["hypertrophic", "oligotrophic", "atrophic"]),
            ],
            "failed",
            "fracture_date",
        )
        .unwrap()
    }

    fn parse(text: &str) -> Result<Dataset, CohortError> {
        read_dataset(text.as_bytes(), &schema())
    }

    #[test]
    fn parses_complete_rows() {
        let ds = parse(
            "failed,fracture_date,crp,smoker,comorbidities,weber\n\
             1,2010-01-01,3.5,true,diabetes,atrophic\n\
             0,2011-02-03,1,0,;,hypertrophic\n\
             0,2012-03-04,7.25,1,renal;diabetes,oligotrophic\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.outcomes(), &[true, false, false]);
        assert_eq!(ds.missing_fraction(), 0.0);
        let com = ds.schema().index_of("comorbidities").unwrap();
        assert_eq!(ds.records()[1].values[com], Cell::CategorySet(vec![]));
        // stored in vocabulary order
        assert_eq!(
            ds.records()[2].values[com],
            Cell::CategorySet(vec!["diabetes".into(), "renal".into()])
        );
    }

    #[test]
    fn header_order_is_irrelevant() {
        let ds = parse("weber,crp,failed,smoker,fracture_date,comorbidities\natrophic,,0,,2010-01-01,\n").unwrap();
        let crp = ds.schema().index_of("crp").unwrap();
        assert_eq!(ds.records()[0].values[crp], Cell::Missing);
    }

    #[test]
    fn multi_select_cell() {
        let ds = parse(
            "failed,fracture_date,crp,smoker,comorbidities,weber\n0,2010-01-01,1,0,diabetes;lung_disease,atrophic\n",
        )
        .unwrap();
        let rec = &ds.records()[0];
        assert_eq!(
            rec.get(ds.schema(), "comorbidities"),
            Some(&Cell::CategorySet(vec!["diabetes".into(), "lung_disease".into()]))
        );
    }

    #[test]
    fn errors() {
        let head = "failed,fracture_date,crp,smoker,comorbidities,weber\n";
        let e = parse(&format!("{head}0,2010-01-01,1,maybe,,atrophic\n")).unwrap_err();
        assert_eq!(e, CohortError::TypeMismatch { row: 0, column: "smoker".into() });
        let e = parse(&format!("{head}0,2010-01-01,abc,0,,atrophic\n")).unwrap_err();
        assert!(matches!(e, CohortError::TypeMismatch { .. }));
        let e = parse(&format!("{head}0,2010-13-01,1,0,,atrophic\n")).unwrap_err();
        assert!(matches!(e, CohortError::InvalidDate { .. }));
        let e = parse(&format!("{head}0,2010-01-01,1,0,gout,atrophic\n")).unwrap_err();
        assert!(matches!(e, CohortError::UnknownCategory { .. }));
        let e = parse(&format!("{head}0,2010-01-01,1,0,,necrotic\n")).unwrap_err();
        assert!(matches!(e, CohortError::UnknownCategory { .. }));
        let e = parse(&format!("{head},2010-01-01,1,0,,atrophic\n")).unwrap_err();
        assert_eq!(e, CohortError::MissingOutcome { row: 0 });
        let e = parse("failed,fracture_date,crp,smoker,comorbidities\n").unwrap_err();
        assert_eq!(e, CohortError::MissingColumn("weber".into()));
        let e = parse("failed,fracture_date,crp,smoker,comorbidities,weber,extra\n").unwrap_err();
        assert_eq!(e, CohortError::UnknownColumn("extra".into()));
    }

    #[test]
    fn write_then_read_preserves_text() {
        let text = "failed,fracture_date,crp,smoker,comorbidities,weber\n\
                    1,2010-01-01,0.1,1,diabetes;renal,atrophic\n\
                    0,2011-02-03,,0,;,\n";
        let ds = parse(text).unwrap();
        let mut out = Vec::new();
        write_dataset_to(&mut out, &ds).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
