//! Synthetic-confounder injection: add a covariate mixing a standardized
//! target column with noise and watch how coefficients and the ATT move.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnalysisDataset, ColumnData, CovariateSpec};
use crate::rng::{stream, Purpose};
use crate::stats::{mean, std_dev};

pub const INJECTED: &str = "synthetic_confounder";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("mix weight {0} is outside [0, 1]")]
    InvalidWeight(f64),
    #[error("target column `{0}` is constant")]
    ConstantTarget(String),
    #[error("dataset has no treatment column")]
    NoTreatment,
    #[error("dataset already has a covariate named `{INJECTED}`")]
    NameTaken,
    #[error("replicates_per_w must be at least 1")]
    NoReplicates,
    #[error("injected column is degenerate")]
    Degenerate,
    #[error("every sweep cell failed")]
    AllFailed,
    #[error("cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionTarget {
    Outcome,
    Treatment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub enabled: bool,
    pub target: InjectionTarget,
    pub replicates_per_w: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { enabled: false, target: InjectionTarget::Outcome, replicates_per_w: 10 }
    }
}

/// Mix weights 0.0, 0.1, ..., 1.0.
pub fn grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let (m, s) = (mean(v), std_dev(v));
    (s > 0.0 && s.is_finite()).then(|| v.iter().map(|x| (x - m) / s).collect())
}

/// The injected column `w·z(target) + (1 − w)·ε`, re-standardized. The
/// noise draw depends on `(seed, replicate)` only, so every weight of one
/// replicate shares the same ε.
pub fn injected_column(
    ds: &AnalysisDataset,
    w: f64,
    target: InjectionTarget,
    seed: u64,
    replicate: usize,
) -> Result<Vec<f64>, SensitivityError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(SensitivityError::InvalidWeight(w));
    }
    let (name, raw): (&str, Vec<f64>) = match target {
        InjectionTarget::Outcome => (ds.outcome_name(), ds.outcome().to_vec()),
        InjectionTarget::Treatment => (
            ds.treatment_name().ok_or(SensitivityError::NoTreatment)?,
            ds.treatment().ok_or(SensitivityError::NoTreatment)?.iter().map(|&d| f64::from(d)).collect(),
        ),
    };
    let z = standardize(&raw).ok_or_else(|| SensitivityError::ConstantTarget(name.to_string()))?;
    let mut rng = stream(seed, Purpose::Injection, replicate as u64);
    let mixed: Vec<f64> = z
        .iter()
        .map(|&zi| {
            let e: f64 = rng.sample(StandardNormal);
            w * zi + (1.0 - w) * e
        })
        .collect();
    standardize(&mixed).ok_or(SensitivityError::Degenerate)
}

/// Appends the injected column as a continuous covariate.
pub fn inject(
    ds: &AnalysisDataset,
    w: f64,
    target: InjectionTarget,
    seed: u64,
    replicate: usize,
) -> Result<AnalysisDataset, SensitivityError> {
    if ds.covariate(INJECTED).is_some() {
        return Err(SensitivityError::NameTaken);
    }
    let col = injected_column(ds, w, target, seed, replicate)?;
    ds.with_covariate(CovariateSpec::continuous(INJECTED), ColumnData::Numeric(col))
        .map_err(|_| SensitivityError::NameTaken)
}

/// What one cell's refit reports back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub coefficients: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub att: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub w: f64,
    pub replicate: usize,
    pub injected_coefficient: f64,
    pub injected_se: Option<f64>,
    pub coefficients: BTreeMap<String, f64>,
    pub att: f64,
    /// `att(w) − att(0)` for the same replicate, when the w = 0 cell succeeded.
    pub att_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub w: f64,
    pub replicate: usize,
    pub error: String,
}

/// Per-weight averages across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w: f64,
    pub n_ok: usize,
    pub mean_injected_coefficient: f64,
    /// Monte-Carlo standard error of the mean injected coefficient.
    pub se_injected_coefficient: f64,
    pub mean_abs_injected_coefficient: f64,
    pub mean_coefficients: BTreeMap<String, f64>,
    pub mean_att: f64,
    pub mean_att_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySweep {
    pub grid: Vec<f64>,
    pub target: InjectionTarget,
    pub replicates_per_w: usize,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
    pub failures: Vec<CellFailure>,
    pub points: Vec<SweepPoint>,
}

fn summarize(w: f64, cells: &[&SweepCell]) -> SweepPoint {
    let coefs: Vec<f64> = cells.iter().map(|c| c.injected_coefficient).collect();
    let abs: Vec<f64> = coefs.iter().map(|c| c.abs()).collect();
    let mut mean_coefficients = BTreeMap::new();
    for c in cells {
        for (k, v) in &c.coefficients {
            *mean_coefficients.entry(k.clone()).or_insert(0.0) += v / cells.len() as f64;
        }
    }
    let shifts: Vec<f64> = cells.iter().filter_map(|c| c.att_shift).collect();
    let se = if coefs.len() > 1 { std_dev(&coefs) / (coefs.len() as f64).sqrt() } else { 0.0 };
    SweepPoint {
        w,
        n_ok: cells.len(),
        mean_injected_coefficient: mean(&coefs),
        se_injected_coefficient: se,
        mean_abs_injected_coefficient: mean(&abs),
        mean_coefficients,
        mean_att: mean(&cells.iter().map(|c| c.att).collect::<Vec<_>>()),
        mean_att_shift: (!shifts.is_empty()).then(|| mean(&shifts)),
    }
}

/// Runs `cell` on every (w, replicate) pair of the grid with the injected
/// column added. Cells run in parallel; output order is by (w, replicate).
pub fn sweep<F>(
    ds: &AnalysisDataset,
    target: InjectionTarget,
    replicates_per_w: usize,
    seed: u64,
    cell: F,
    progress: &(dyn Fn(usize, usize) + Sync),
    cancelled: &(dyn Fn() -> bool + Sync),
) -> Result<SensitivitySweep, SensitivityError>
where
    F: Fn(&AnalysisDataset) -> Result<CellFit, String> + Sync,
{
    if replicates_per_w == 0 {
        return Err(SensitivityError::NoReplicates);
    }
    let grid = grid();
    let jobs: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|i| (0..replicates_per_w).map(move |r| (i, r))).collect();
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let results: Vec<Option<Result<CellFit, String>>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            if cancelled() {
                return None;
            }
            let out = inject(ds, grid[i], target, seed, r)
                .map_err(|e| e.to_string())
                .and_then(|aug| cell(&aug))
                .and_then(|fit| {
                    if fit.coefficients.contains_key(INJECTED) {
                        Ok(fit)
                    } else {
                        Err(format!("refit has no `{INJECTED}` coefficient"))
                    }
                });
            progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
            Some(out)
        })
        .collect();
    if cancelled() || results.iter().any(Option::is_none) {
        return Err(SensitivityError::Cancelled);
    }
    let results: Vec<Result<CellFit, String>> = results.into_iter().flatten().collect();

    let baseline: Vec<Option<f64>> =
        (0..replicates_per_w).map(|r| results[r].as_ref().ok().map(|f| f.att)).collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (&(i, r), res) in jobs.iter().zip(results) {
        let w = grid[i];
        match res {
            Ok(fit) => cells.push(SweepCell {
                w,
                replicate: r,
                injected_coefficient: fit.coefficients[INJECTED],
                injected_se: fit.standard_errors.get(INJECTED).copied(),
                att: fit.att,
                att_shift: baseline[r].map(|b| fit.att - b),
                coefficients: fit.coefficients,
            }),
            Err(error) => failures.push(CellFailure { w, replicate: r, error }),
        }
    }
    if cells.is_empty() {
        return Err(SensitivityError::AllFailed);
    }
    let points = grid
        .iter()
        .filter_map(|&w| {
            let at: Vec<&SweepCell> = cells.iter().filter(|c| c.w == w).collect();
            (!at.is_empty()).then(|| summarize(w, &at))
        })
        .collect();
    Ok(SensitivitySweep { grid, target, replicates_per_w, seed, cells, failures, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetSchema;
    use crate::stats::pearson;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dataset(n: usize, seed: u64) -> AnalysisDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: Some("d".into()),
            date: None,
            covariates: vec![CovariateSpec::continuous("x")],
        };
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let d: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
        AnalysisDataset::from_parts(
            schema,
            (0..n).map(|i| format!("u{i}")).collect(),
            vec![ColumnData::Numeric(x)],
            y,
            Some(d),
            None,
        )
        .unwrap()
    }

    #[test]
    fn grid_has_eleven_points() {
        let g = grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn full_weight_reproduces_target() {
        let ds = dataset(200, 1);
        let s = injected_column(&ds, 1.0, InjectionTarget::Outcome, 4, 0).unwrap();
        let z = standardize(ds.outcome()).unwrap();
        for (a, b) in s.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((pearson(&s, ds.outcome()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_is_noise() {
        let ds = dataset(20_000, 2);
        let s = injected_column(&ds, 0.0, InjectionTarget::Outcome, 4, 0).unwrap();
        assert!(pearson(&s, ds.outcome()).unwrap().abs() < 0.03);
        let mix = injected_column(&ds, 0.6, InjectionTarget::Outcome, 4, 0).unwrap();
        // 0.6 z + 0.4 ε has correlation 0.6 / sqrt(0.52) with z
        let expected = 0.6 / (0.6f64.powi(2) + 0.4f64.powi(2)).sqrt();
        assert!((pearson(&mix, ds.outcome()).unwrap() - expected).abs() < 0.02);
    }

    #[test]
    fn inject_appends_covariate() {
        let ds = dataset(50, 3);
        let aug = inject(&ds, 0.3, InjectionTarget::Treatment, 1, 2).unwrap();
        assert!(aug.covariate(INJECTED).is_some());
        assert_eq!(inject(&aug, 0.3, InjectionTarget::Outcome, 1, 2).unwrap_err(), SensitivityError::NameTaken);
        assert_eq!(
            injected_column(&ds, 1.5, InjectionTarget::Outcome, 1, 0).unwrap_err(),
            SensitivityError::InvalidWeight(1.5)
        );
    }

    #[test]
    fn sweep_layout_and_baseline() {
        let ds = dataset(60, 4);
        let cell = |aug: &AnalysisDataset| {
            let Some((_, ColumnData::Numeric(s))) = aug.covariate(INJECTED) else { unreachable!() };
            let c = pearson(s, aug.outcome()).unwrap();
            Ok(CellFit {
                coefficients: [(INJECTED.to_string(), c)].into(),
                standard_errors: BTreeMap::new(),
                att: c * 2.0,
            })
        };
        let sw = sweep(&ds, InjectionTarget::Outcome, 3, 8, cell, &|_, _| {}, &|| false).unwrap();
        assert_eq!(sw.cells.len(), 33);
        assert_eq!(sw.points.len(), 11);
        for c in sw.cells.iter().filter(|c| c.w == 0.0) {
            assert_eq!(c.att_shift, Some(0.0));
        }
        assert!(sw.points[10].mean_abs_injected_coefficient > sw.points[0].mean_abs_injected_coefficient);
        let again = sweep(&ds, InjectionTarget::Outcome, 3, 8, cell, &|_, _| {}, &|| false).unwrap();
        assert_eq!(sw, again);
    }

    #[test]
    fn constant_target_rejected() {
        let ds = dataset(10, 5);
        let flat = AnalysisDataset::from_parts(
            ds.schema().clone(),
            ds.unit_ids().to_vec(),
            vec![ColumnData::Numeric(vec![0.5; 10])],
            vec![1.0; 10],
            ds.treatment().map(<[u8]>::to_vec),
            None,
        )
        .unwrap();
        assert_eq!(
            injected_column(&flat, 0.5, InjectionTarget::Outcome, 1, 0).unwrap_err(),
            SensitivityError::ConstantTarget("y".into())
        );
    }

    proptest! {
        #[test]
        fn injected_is_standardized_and_deterministic(w in 0.0f64..=1.0, seed in any::<u64>(), rep in 0usize..20) {
            let ds = dataset(80, 6);
            let a = injected_column(&ds, w, InjectionTarget::Outcome, seed, rep).unwrap();
            prop_assert_eq!(&a, &injected_column(&ds, w, InjectionTarget::Outcome, seed, rep).unwrap());
            prop_assert!(mean(&a).abs() < 1e-9);
            prop_assert!((std_dev(&a) - 1.0).abs() < 1e-9);
        }
    }
}
