use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{AnalysisDataset, CovariateKind};

/// Base features (expanded covariate columns) plus pairwise interactions.
///
/// Stored in canonical order: base features sorted, each pair sorted, pairs
/// sorted. Two sets with the same members therefore compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureSet {
    pub base_features: Vec<String>,
    pub interactions: Vec<(String, String)>,
}

impl FeatureSet {
    pub fn new<S: Into<String>>(
        base: impl IntoIterator<Item = S>,
        interactions: impl IntoIterator<Item = (S, S)>,
    ) -> Result<Self, ModelError> {
        let base: BTreeSet<String> = base.into_iter().map(Into::into).collect();
        if base.is_empty() {
            return Err(ModelError::EmptyFeatureSet);
        }
        let mut pairs = BTreeSet::new();
        for (a, b) in interactions {
            let (a, b) = (a.into(), b.into());
            if a == b {
                return Err(ModelError::InvalidFeatureSet(format!("self-interaction `{a}`")));
            }
            for m in [&a, &b] {
                if !base.contains(m) {
                    return Err(ModelError::InvalidFeatureSet(format!(
                        "interaction member `{m}` is not a base feature"
                    )));
                }
            }
            let pair = if a < b { (a, b) } else { (b, a) };
            if !pairs.insert(pair.clone()) {
                return Err(ModelError::InvalidFeatureSet(format!("duplicate pair {}:{}", pair.0, pair.1)));
            }
        }
        Ok(Self { base_features: base.into_iter().collect(), interactions: pairs.into_iter().collect() })
    }

    pub fn main_effects<S: Into<String>>(base: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let base: Vec<String> = base.into_iter().map(Into::into).collect();
        Self::new(base, Vec::<(String, String)>::new())
    }

    /// Design column names, base features first then `a:b` interactions.
    pub fn column_names(&self) -> Vec<String> {
        self.base_features
            .iter()
            .cloned()
            .chain(self.interactions.iter().map(|(a, b)| format!("{a}:{b}")))
            .collect()
    }

    pub fn n_terms(&self) -> usize {
        self.base_features.len() + self.interactions.len()
    }

    /// Human-readable formula-style label, e.g. `x + z + x:z`.
    pub fn label(&self) -> String {
        self.column_names().join(" + ")
    }

    pub fn with_base_feature(&self, name: &str) -> Result<Self, ModelError> {
        let mut base = self.base_features.clone();
        base.push(name.to_string());
        Self::new(base, self.interactions.clone())
    }
}

/// Centering and scaling applied to one base feature before fitting.
/// Continuous features get their fit-sample mean and sd; binary and one-hot
/// columns pass through (mean 0, sd 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature: String,
    pub mean: f64,
    pub sd: f64,
}

pub(crate) struct RawColumns {
    columns: HashMap<String, (CovariateKind, Vec<f64>)>,
}

impl RawColumns {
    pub(crate) fn of(ds: &AnalysisDataset) -> Self {
        Self {
            columns: ds.expanded_columns().into_iter().map(|c| (c.name, (c.kind, c.values))).collect(),
        }
    }

    fn get(&self, name: &str) -> Result<&(CovariateKind, Vec<f64>), ModelError> {
        self.columns.get(name).ok_or_else(|| ModelError::UnknownFeature(name.to_string()))
    }
}

pub(crate) fn standardization(
    raw: &RawColumns,
    rows: &[usize],
    features: &FeatureSet,
) -> Result<Vec<Standardization>, ModelError> {
    features
        .base_features
        .iter()
        .map(|name| {
            let (kind, values) = raw.get(name)?;
            let (mean, sd) = match kind {
                CovariateKind::Continuous => {
                    let vals: Vec<f64> = rows.iter().map(|&r| values[r]).collect();
                    let sd = crate::stats::std_dev(&vals);
                    if sd <= 0.0 || !sd.is_finite() {
                        return Err(ModelError::DegenerateFeature(name.clone()));
                    }
                    (crate::stats::mean(&vals), sd)
                }
                _ => (0.0, 1.0),
            };
            Ok(Standardization { feature: name.clone(), mean, sd })
        })
        .collect()
}

/// Design matrix with a leading intercept column.
pub(crate) fn design_matrix(
    raw: &RawColumns,
    rows: &[usize],
    features: &FeatureSet,
    standardization: &[Standardization],
) -> Result<DMatrix<f64>, ModelError> {
    let n = rows.len();
    let p = features.n_terms();
    let mut x = DMatrix::<f64>::zeros(n, p + 1);
    x.column_mut(0).fill(1.0);
    let mut index = HashMap::new();
    for (j, (name, st)) in features.base_features.iter().zip(standardization).enumerate() {
        debug_assert_eq!(name, &st.feature);
        let (_, values) = raw.get(name)?;
        for (i, &r) in rows.iter().enumerate() {
            x[(i, j + 1)] = (values[r] - st.mean) / st.sd;
        }
        index.insert(name.as_str(), j + 1);
    }
    let offset = features.base_features.len() + 1;
    for (k, (a, b)) in features.interactions.iter().enumerate() {
        let (ja, jb) = (index[a.as_str()], index[b.as_str()]);
        for i in 0..n {
            x[(i, offset + k)] = x[(i, ja)] * x[(i, jb)];
        }
    }
    Ok(x)
}

/// Reject columns that are constant over the rows being fitted.
pub(crate) fn check_not_degenerate(x: &DMatrix<f64>, names: &[String]) -> Result<(), ModelError> {
    for (j, name) in names.iter().enumerate() {
        let col = x.column(j + 1);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(ModelError::DegenerateFeature(name.clone()));
        }
    }
    Ok(())
}
