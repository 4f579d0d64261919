//! Unit-level tabular data with typed covariates, plus the pre-modelling
//! checks (common support, correlated-covariate screen).

mod checks;
mod ingest;

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checks::{
    check_overlap, correlation_screen, CorrelationScreen, CorrelationWarning, GroupSupport,
    OverlapReport, ValidationReport,
};
pub use ingest::{ingest, ingest_reader, ingest_str};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: cannot parse `{value}` in column `{column}` as {expected}")]
    Unparseable {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("row {row}: value `{value}` is not a declared category of `{column}`")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: binary covariate `{column}` has value `{value}`")]
    NotBinary {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: treatment not binary (value `{value}`)")]
    TreatmentNotBinary { row: usize, value: String },
    #[error("treatment column `{0}` does not contain both 0 and 1")]
    TreatmentOneSided(String),
    #[error("duplicate unit_id `{0}`")]
    DuplicateUnit(String),
    #[error("row {row}: outcome is not finite")]
    NonFiniteOutcome { row: usize },
    #[error("history_days must be at least 1")]
    InvalidHistoryDays,
    #[error("dataset has no observation date column")]
    NoDateColumn,
    #[error("no rows in window")]
    EmptyWindow,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    /// Declared levels, categorical only. The first is the reference level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Continuous, categories: Vec::new() }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Binary, categories: Vec::new() }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }
}

fn default_unit_id() -> String {
    "unit_id".to_string()
}

/// The JSON sidecar describing how to read a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(default = "default_unit_id")]
    pub unit_id: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    pub covariates: Vec<CovariateSpec>,
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let schema: DatasetSchema =
            serde_json::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        let reserved = [Some(&self.unit_id), Some(&self.outcome), self.treatment.as_ref(), self.date.as_ref()];
        for name in reserved.into_iter().flatten() {
            if name.is_empty() {
                return Err(DatasetError::Schema("column names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::Schema(format!("column `{name}` declared twice")));
            }
        }
        for cov in &self.covariates {
            if cov.name.is_empty() {
                return Err(DatasetError::Schema("covariate names must be non-empty".into()));
            }
            if !seen.insert(cov.name.as_str()) {
                return Err(DatasetError::Schema(format!("column `{}` declared twice", cov.name)));
            }
            match cov.kind {
                CovariateKind::Categorical => {
                    if cov.categories.len() < 2 {
                        return Err(DatasetError::Schema(format!(
                            "categorical covariate `{}` needs at least 2 categories",
                            cov.name
                        )));
                    }
                    let distinct: HashSet<&String> = cov.categories.iter().collect();
                    if distinct.len() != cov.categories.len() {
                        return Err(DatasetError::Schema(format!(
                            "categorical covariate `{}` repeats a category",
                            cov.name
                        )));
                    }
                }
                _ if !cov.categories.is_empty() => {
                    return Err(DatasetError::Schema(format!(
                        "only categorical covariates may declare categories (`{}`)",
                        cov.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Column storage: numbers for continuous/binary covariates, category
/// indices for categorical ones.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }

    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }
}

/// A numeric design column after one-hot expansion of categoricals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedColumn {
    pub name: String,
    /// Name of the covariate this column was derived from.
    pub source: String,
    pub kind: CovariateKind,
    pub values: Vec<f64>,
}

/// Ingested, validated, immutable analysis table.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDataset {
    schema: DatasetSchema,
    unit_ids: Vec<String>,
    columns: Vec<ColumnData>,
    outcome: Vec<f64>,
    treatment: Option<Vec<u8>>,
    dates: Option<Vec<NaiveDate>>,
}

impl AnalysisDataset {
    /// Assemble a dataset from columns, checking every invariant.
    pub fn from_parts(
        schema: DatasetSchema,
        unit_ids: Vec<String>,
        columns: Vec<ColumnData>,
        outcome: Vec<f64>,
        treatment: Option<Vec<u8>>,
        dates: Option<Vec<NaiveDate>>,
    ) -> Result<Self, DatasetError> {
        schema.validate()?;
        let n = unit_ids.len();
        let ds = Self { schema, unit_ids, columns, outcome, treatment, dates };
        if ds.columns.len() != ds.schema.covariates.len() {
            return Err(DatasetError::Invalid("one column per declared covariate required".into()));
        }
        let lengths_ok = ds.outcome.len() == n
            && ds.columns.iter().all(|c| c.len() == n)
            && ds.treatment.as_ref().is_none_or(|t| t.len() == n)
            && ds.dates.as_ref().is_none_or(|d| d.len() == n);
        if !lengths_ok {
            return Err(DatasetError::Invalid("column lengths differ".into()));
        }
        if ds.treatment.is_some() != ds.schema.treatment.is_some()
            || ds.dates.is_some() != ds.schema.date.is_some()
        {
            return Err(DatasetError::Invalid("columns do not match schema".into()));
        }
        ds.check_invariants()?;
        if let (Some(t), Some(name)) = (&ds.treatment, &ds.schema.treatment) {
            if !(t.contains(&0) && t.contains(&1)) {
                return Err(DatasetError::TreatmentOneSided(name.clone()));
            }
        }
        Ok(ds)
    }

    fn check_invariants(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::with_capacity(self.unit_ids.len());
        for id in &self.unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(DatasetError::DuplicateUnit(id.clone()));
            }
        }
        if let Some(row) = self.outcome.iter().position(|y| !y.is_finite()) {
            return Err(DatasetError::NonFiniteOutcome { row: row + 1 });
        }
        for (spec, col) in self.schema.covariates.iter().zip(&self.columns) {
            match (spec.kind, col) {
                (CovariateKind::Continuous, ColumnData::Numeric(v)) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(DatasetError::Unparseable {
                            row: row + 1,
                            column: spec.name.clone(),
                            value: v[row].to_string(),
                            expected: "a finite number",
                        });
                    }
                }
                (CovariateKind::Binary, ColumnData::Numeric(v)) => {
                    if let Some(row) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                        return Err(DatasetError::NotBinary {
                            row: row + 1,
                            column: spec.name.clone(),
                            value: v[row].to_string(),
                        });
                    }
                }
                (CovariateKind::Categorical, ColumnData::Categorical(v)) => {
                    if let Some(row) = v.iter().position(|&c| c as usize >= spec.categories.len()) {
                        return Err(DatasetError::UnknownCategory {
                            row: row + 1,
                            column: spec.name.clone(),
                            value: v[row].to_string(),
                        });
                    }
                }
                _ => {
                    return Err(DatasetError::Invalid(format!(
                        "storage does not match kind of `{}`",
                        spec.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.schema.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<(&CovariateSpec, &ColumnData)> {
        self.schema
            .covariates
            .iter()
            .position(|c| c.name == name)
            .map(|i| (&self.schema.covariates[i], &self.columns[i]))
    }

    pub fn outcome_name(&self) -> &str {
        &self.schema.outcome
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment_name(&self) -> Option<&str> {
        self.schema.treatment.as_deref()
    }

    pub fn treatment(&self) -> Option<&[u8]> {
        self.treatment.as_deref()
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }

    /// Row indices split by treatment arm `(treated, control)`.
    pub fn arms(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let t = self.treatment.as_ref()?;
        let treated = (0..t.len()).filter(|&i| t[i] == 1).collect();
        let control = (0..t.len()).filter(|&i| t[i] == 0).collect();
        Some((treated, control))
    }

    /// Numeric design columns: continuous and binary covariates as-is,
    /// categoricals one-hot with the first declared level dropped.
    pub fn expanded_columns(&self) -> Vec<ExpandedColumn> {
        let mut out = Vec::new();
        for (spec, col) in self.schema.covariates.iter().zip(&self.columns) {
            match col {
                ColumnData::Numeric(v) => out.push(ExpandedColumn {
                    name: spec.name.clone(),
                    source: spec.name.clone(),
                    kind: spec.kind,
                    values: v.clone(),
                }),
                ColumnData::Categorical(v) => {
                    for (level, label) in spec.categories.iter().enumerate().skip(1) {
                        out.push(ExpandedColumn {
                            name: format!("{}={}", spec.name, label),
                            source: spec.name.clone(),
                            kind: CovariateKind::Categorical,
                            values: v.iter().map(|&c| f64::from(c as usize == level)).collect(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Names of the expanded columns belonging to each covariate, in schema order.
    pub fn expanded_groups(&self) -> Vec<(String, Vec<String>)> {
        self.schema
            .covariates
            .iter()
            .map(|spec| {
                let cols = match spec.kind {
                    CovariateKind::Categorical => spec
                        .categories
                        .iter()
                        .skip(1)
                        .map(|l| format!("{}={}", spec.name, l))
                        .collect(),
                    _ => vec![spec.name.clone()],
                };
                (spec.name.clone(), cols)
            })
            .collect()
    }

    /// Replace (or set) the treatment column.
    pub fn with_treatment(&self, name: &str, values: Vec<u8>) -> Result<Self, DatasetError> {
        if values.len() != self.len() {
            return Err(DatasetError::Invalid("treatment length differs from dataset".into()));
        }
        if let Some(row) = values.iter().position(|&v| v > 1) {
            return Err(DatasetError::TreatmentNotBinary { row: row + 1, value: values[row].to_string() });
        }
        let mut schema = self.schema.clone();
        schema.treatment = Some(name.to_string());
        if schema.covariates.iter().any(|c| c.name == name) {
            return Err(DatasetError::Schema(format!("treatment `{name}` collides with a covariate")));
        }
        let mut ds = self.clone();
        ds.schema = schema;
        ds.treatment = Some(values);
        ds.schema.validate()?;
        Ok(ds)
    }

    /// Append a covariate column.
    pub fn with_covariate(&self, spec: CovariateSpec, column: ColumnData) -> Result<Self, DatasetError> {
        let mut ds = self.clone();
        ds.schema.covariates.push(spec);
        ds.columns.push(column);
        ds.schema.validate()?;
        if ds.columns.last().map(ColumnData::len) != Some(ds.len()) {
            return Err(DatasetError::Invalid("covariate length differs from dataset".into()));
        }
        ds.check_invariants()?;
        Ok(ds)
    }

    /// Keep the given rows (in the given order). Rows must be distinct.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DatasetError> {
        let ds = self.select_rows_unchecked(rows);
        ds.check_invariants()?;
        Ok(ds)
    }

    /// Row selection that tolerates repeated rows, as needed for resampling.
    /// Unit ids repeat accordingly, so the result is only for internal use.
    pub(crate) fn select_rows_unchecked(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            unit_ids: rows.iter().map(|&r| self.unit_ids[r].clone()).collect(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            treatment: self.treatment.as_ref().map(|t| rows.iter().map(|&r| t[r]).collect()),
            dates: self.dates.as_ref().map(|d| rows.iter().map(|&r| d[r]).collect()),
        }
    }

    /// Latest observation date, if the dataset has dates.
    pub fn max_date(&self) -> Option<NaiveDate> {
        self.dates.as_ref()?.iter().max().copied()
    }

    /// Write the dataset back out as CSV using the schema's column names.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.schema.unit_id.clone(), self.schema.outcome.clone()];
        header.extend(self.schema.treatment.iter().cloned());
        header.extend(self.schema.date.iter().cloned());
        header.extend(self.schema.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| DatasetError::Csv(e.to_string()))?;
        for row in 0..self.len() {
            let mut rec = vec![self.unit_ids[row].clone(), self.outcome[row].to_string()];
            if let Some(t) = &self.treatment {
                rec.push(t[row].to_string());
            }
            if let Some(d) = &self.dates {
                rec.push(d[row].format("%Y-%m-%d").to_string());
            }
            for (spec, col) in self.schema.covariates.iter().zip(&self.columns) {
                rec.push(match col {
                    ColumnData::Numeric(v) => v[row].to_string(),
                    ColumnData::Categorical(v) => spec.categories[v[row] as usize].clone(),
                });
            }
            w.write_record(&rec).map_err(|e| DatasetError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| DatasetError::Io(e.to_string()))
    }
}

/// Keep rows observed within `history_days` days up to and including
/// `reference_date`: `0 <= reference_date - date < history_days`.
pub fn filter_by_window(
    ds: &AnalysisDataset,
    history_days: u32,
    reference_date: NaiveDate,
) -> Result<AnalysisDataset, DatasetError> {
    if history_days == 0 {
        return Err(DatasetError::InvalidHistoryDays);
    }
    let dates = ds.dates().ok_or(DatasetError::NoDateColumn)?;
    let rows: Vec<usize> = dates
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let age = (reference_date - **d).num_days();
            (0..i64::from(history_days)).contains(&age)
        })
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(DatasetError::EmptyWindow);
    }
    ds.select_rows(&rows)
}
