use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::AnalysisDataset;
use crate::rng::{stream, Purpose};

/// Stratified train/test partition. Row indices are kept sorted so fitting
/// order never depends on the shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub seed: u64,
    pub train_fraction: f64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

fn arm_train_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Splits each treatment arm independently at `train_fraction`.
pub fn split(ds: &AnalysisDataset, train_fraction: f64, seed: u64) -> Result<SplitIndex, ModelError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ModelError::InvalidFraction);
    }
    let (treated, control) = ds.arms().ok_or(ModelError::NoTreatment)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (index, (arm, mut rows)) in [("treated", treated), ("control", control)].into_iter().enumerate() {
        if rows.len() < 2 {
            return Err(ModelError::ArmTooSmall { arm, size: rows.len() });
        }
        let mut rng = stream(seed, Purpose::Split, index as u64);
        rows.shuffle(&mut rng);
        let k = arm_train_size(rows.len(), train_fraction);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let ids = |rows: &[usize]| rows.iter().map(|&r| ds.unit_ids()[r].clone()).collect();
    Ok(SplitIndex {
        seed,
        train_fraction,
        train_ids: ids(&train),
        test_ids: ids(&test),
        train_rows: train,
        test_rows: test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, CovariateSpec, DatasetSchema};

    fn dataset(n_treated: usize, n_control: usize) -> AnalysisDataset {
        let n = n_treated + n_control;
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: Some("d".into()),
            date: None,
            covariates: vec![CovariateSpec::continuous("x")],
        };
        let mut d = vec![1u8; n_treated];
        d.extend(vec![0u8; n_control]);
        AnalysisDataset::from_parts(
            schema,
            (0..n).map(|i| format!("u{i}")).collect(),
            vec![ColumnData::Numeric((0..n).map(|i| i as f64).collect())],
            vec![0.0; n],
            Some(d),
            None,
        )
        .unwrap()
    }

    #[test]
    fn exact_stratification() {
        let ds = dataset(100, 100);
        let s = split(&ds, 0.8, 1).unwrap();
        let t = ds.treatment().unwrap();
        let count = |rows: &[usize], arm: u8| rows.iter().filter(|&&r| t[r] == arm).count();
        assert_eq!((count(&s.train_rows, 1), count(&s.train_rows, 0)), (80, 80));
        assert_eq!((count(&s.test_rows, 1), count(&s.test_rows, 0)), (20, 20));
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = dataset(30, 50);
        assert_eq!(split(&ds, 0.8, 9).unwrap(), split(&ds, 0.8, 9).unwrap());
        assert_ne!(split(&ds, 0.8, 9).unwrap().train_rows, split(&ds, 0.8, 10).unwrap().train_rows);
    }

    #[test]
    fn small_arms_and_fractions() {
        assert_eq!(split(&dataset(1, 10), 0.8, 0).unwrap_err(), ModelError::ArmTooSmall { arm: "treated", size: 1 });
        assert_eq!(split(&dataset(5, 5), 1.0, 0).unwrap_err(), ModelError::InvalidFraction);
        // both sides keep each arm even at extreme fractions
        let s = split(&dataset(2, 3), 0.99, 0).unwrap();
        assert_eq!(s.test_rows.len(), 2);
    }
}
