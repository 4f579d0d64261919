use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use super::{AnalysisDataset, ColumnData, CovariateKind, DatasetError, DatasetSchema};

/// Read a comma-delimited, header-first CSV file against `schema`.
pub fn ingest(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<AnalysisDataset, DatasetError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest_reader(file, schema)
}

pub fn ingest_str(text: &str, schema: &DatasetSchema) -> Result<AnalysisDataset, DatasetError> {
    ingest_reader(text.as_bytes(), schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<AnalysisDataset, DatasetError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::Csv(e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let locate = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };

    let id_col = locate(&schema.unit_id)?;
    let outcome_col = locate(&schema.outcome)?;
    let treatment_col = schema.treatment.as_deref().map(locate).transpose()?;
    let date_col = schema.date.as_deref().map(locate).transpose()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| locate(&c.name))
        .collect::<Result<Vec<_>, _>>()?;
    let category_maps: Vec<HashMap<&str, u32>> = schema
        .covariates
        .iter()
        .map(|c| c.categories.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect())
        .collect();

    let mut unit_ids = Vec::new();
    let mut outcome = Vec::new();
    let mut treatment = treatment_col.map(|_| Vec::new());
    let mut dates = date_col.map(|_| Vec::new());
    let mut columns: Vec<ColumnData> = schema
        .covariates
        .iter()
        .map(|c| match c.kind {
            CovariateKind::Categorical => ColumnData::Categorical(Vec::new()),
            _ => ColumnData::Numeric(Vec::new()),
        })
        .collect();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DatasetError::Csv(format!("row {row}: {e}")))?;
        let cell = |col: usize, name: &str| -> Result<&str, DatasetError> {
            match record.get(col).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DatasetError::MissingValue { row, column: name.to_string() }),
            }
        };

        unit_ids.push(cell(id_col, &schema.unit_id)?.to_string());

        let y = parse_number(cell(outcome_col, &schema.outcome)?, row, &schema.outcome)?;
        if !y.is_finite() {
            return Err(DatasetError::NonFiniteOutcome { row });
        }
        outcome.push(y);

        if let (Some(col), Some(out), Some(name)) = (treatment_col, treatment.as_mut(), &schema.treatment) {
            let raw = cell(col, name)?;
            match raw.parse::<f64>() {
                Ok(0.0) => out.push(0u8),
                Ok(1.0) => out.push(1u8),
                _ => return Err(DatasetError::TreatmentNotBinary { row, value: raw.to_string() }),
            }
        }

        if let (Some(col), Some(out), Some(name)) = (date_col, dates.as_mut(), &schema.date) {
            let raw = cell(col, name)?;
            let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| DatasetError::Unparseable {
                row,
                column: name.clone(),
                value: raw.to_string(),
                expected: "an ISO-8601 date",
            })?;
            out.push(date);
        }

        for (k, spec) in schema.covariates.iter().enumerate() {
            let raw = cell(cov_cols[k], &spec.name)?;
            match (&mut columns[k], spec.kind) {
                (ColumnData::Categorical(out), _) => {
                    let level = category_maps[k].get(raw).ok_or_else(|| DatasetError::UnknownCategory {
                        row,
                        column: spec.name.clone(),
                        value: raw.to_string(),
                    })?;
                    out.push(*level);
                }
                (ColumnData::Numeric(out), CovariateKind::Binary) => {
                    let v = parse_number(raw, row, &spec.name)?;
                    if v != 0.0 && v != 1.0 {
                        return Err(DatasetError::NotBinary { row, column: spec.name.clone(), value: raw.to_string() });
                    }
                    out.push(v);
                }
                (ColumnData::Numeric(out), _) => {
                    let v = parse_number(raw, row, &spec.name)?;
                    if !v.is_finite() {
                        return Err(DatasetError::Unparseable {
                            row,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                            expected: "a finite number",
                        });
                    }
                    out.push(v);
                }
            }
        }
    }

    AnalysisDataset::from_parts(schema.clone(), unit_ids, columns, outcome, treatment, dates)
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    raw.parse::<f64>().map_err(|_| DatasetError::Unparseable {
        row,
        column: column.to_string(),
        value: raw.to_string(),
        expected: "a number",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CovariateSpec;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            unit_id: "unit_id".into(),
            outcome: "y".into(),
            treatment: Some("d".into()),
            date: None,
            covariates: vec![CovariateSpec::continuous("age")],
        }
    }

    #[test]
    fn ingests_matching_file() {
        let csv = "unit_id,y,d,age\nu1,1.5,1,30\nu2,2,0,41\nu3,0.25,0,52\n";
        let ds = ingest_str(csv, &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.unit_ids(), &["u1", "u2", "u3"]);
        assert_eq!(ds.outcome(), &[1.5, 2.0, 0.25]);
        assert_eq!(ds.treatment().unwrap(), &[1, 0, 0]);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let csv = "unit_id,y,d,age\nu1,1,1,30\nu2,2,2,41\n";
        let err = ingest_str(csv, &schema()).unwrap_err();
        assert!(err.to_string().contains("treatment not binary"), "{err}");
        assert_eq!(err, DatasetError::TreatmentNotBinary { row: 2, value: "2".into() });
    }

    #[test]
    fn rejects_duplicate_unit_ids() {
        let csv = "unit_id,y,d,age\nu1,1,1,30\nu1,2,0,41\n";
        let err = ingest_str(csv, &schema()).unwrap_err();
        assert_eq!(err, DatasetError::DuplicateUnit("u1".into()));
        assert!(err.to_string().contains("u1"));
    }

    #[test]
    fn names_missing_columns() {
        let csv = "unit_id,y,d\nu1,1,1\n";
        assert_eq!(ingest_str(csv, &schema()).unwrap_err(), DatasetError::MissingColumn("age".into()));
    }

    #[test]
    fn rejects_missing_and_unparseable_cells() {
        let csv = "unit_id,y,d,age\nu1,1,1,30\nu2,2,0,\n";
        assert_eq!(
            ingest_str(csv, &schema()).unwrap_err(),
            DatasetError::MissingValue { row: 2, column: "age".into() }
        );
        let csv = "unit_id,y,d,age\nu1,1,1,thirty\nu2,2,0,1\n";
        assert!(matches!(
            ingest_str(csv, &schema()).unwrap_err(),
            DatasetError::Unparseable { row: 1, .. }
        ));
    }

    #[test]
    fn rejects_one_sided_treatment() {
        let csv = "unit_id,y,d,age\nu1,1,1,30\nu2,2,1,41\n";
        assert_eq!(ingest_str(csv, &schema()).unwrap_err(), DatasetError::TreatmentOneSided("d".into()));
    }

    #[test]
    fn categorical_values_must_be_declared() {
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: None,
            date: Some("day".into()),
            covariates: vec![CovariateSpec::categorical("country", ["NL", "UK"])],
        };
        let ok = "id,y,day,country\na,1,2024-01-02,UK\nb,2,2024-01-03,NL\n";
        let ds = ingest_str(ok, &schema).unwrap();
        assert_eq!(ds.covariate("country").unwrap().1, &ColumnData::Categorical(vec![1, 0]));
        let bad = "id,y,day,country\na,1,2024-01-02,FR\n";
        assert!(matches!(ingest_str(bad, &schema).unwrap_err(), DatasetError::UnknownCategory { .. }));
        let bad_date = "id,y,day,country\na,1,02/01/2024,UK\n";
        assert!(matches!(ingest_str(bad_date, &schema).unwrap_err(), DatasetError::Unparseable { .. }));
    }

    #[test]
    fn honours_rfc4180_quoting() {
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: None,
            date: None,
            covariates: vec![CovariateSpec::categorical("city", ["Amsterdam, NL", "London \"UK\""])],
        };
        let csv = "id,y,city\n\"a,1\",1,\"Amsterdam, NL\"\nb,2,\"London \"\"UK\"\"\"\n";
        let ds = ingest_str(csv, &schema).unwrap();
        assert_eq!(ds.unit_ids()[0], "a,1");
        assert_eq!(ds.covariate("city").unwrap().1, &ColumnData::Categorical(vec![0, 1]));
    }
}
