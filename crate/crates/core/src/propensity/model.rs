use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::design::{check_not_degenerate, design_matrix, standardization, RawColumns};
use super::logistic::{fit_irls, FitConfig};
use super::metrics::{evaluate_scores, EvalSplit, ModelScore};
use super::{FeatureSet, ModelError, Standardization};
use crate::dataset::AnalysisDataset;
use crate::stats::sigmoid;

pub const INTERCEPT: &str = "(intercept)";

const SCORE_FLOOR: f64 = 1e-12;

/// A fitted logistic propensity model. Coefficients are on the
/// standardized feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub feature_set: FeatureSet,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    /// Model-based standard errors (intercept under `(intercept)`), when the
    /// information matrix could be inverted.
    pub standard_errors: BTreeMap<String, f64>,
    pub standardization: Vec<Standardization>,
    pub converged: bool,
    pub iterations: usize,
    /// Unpenalized Bernoulli log-likelihood on the fitting rows.
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
}

fn labels_for(ds: &AnalysisDataset, rows: &[usize]) -> Result<Vec<u8>, ModelError> {
    let t = ds.treatment().ok_or(ModelError::NoTreatment)?;
    Ok(rows.iter().map(|&r| t[r]).collect())
}

impl PropensityModel {
    pub fn fit(
        ds: &AnalysisDataset,
        rows: &[usize],
        features: &FeatureSet,
        config: &FitConfig,
    ) -> Result<Self, ModelError> {
        let labels = labels_for(ds, rows)?;
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let negatives = labels.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(ModelError::SingleClass { positives, negatives });
        }
        let raw = RawColumns::of(ds);
        let standardization = standardization(&raw, rows, features)?;
        let x = design_matrix(&raw, rows, features, &standardization)?;
        let names = features.column_names();
        check_not_degenerate(&x, &names)?;
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let fit = fit_irls(&x, &y, config)?;

        let coefficients = names.iter().enumerate().map(|(j, n)| (n.clone(), fit.beta[j + 1])).collect();
        let standard_errors = fit
            .covariance
            .as_ref()
            .map(|cov| {
                std::iter::once(INTERCEPT.to_string())
                    .chain(names.iter().cloned())
                    .enumerate()
                    .map(|(j, n)| (n, cov[(j, j)].max(0.0).sqrt()))
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            feature_set: features.clone(),
            intercept: fit.beta[0],
            coefficients,
            standard_errors,
            standardization,
            converged: fit.converged,
            iterations: fit.iterations,
            log_likelihood: fit.log_likelihood,
            n_obs: rows.len(),
            l2: config.l2,
        })
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.get(name).copied()
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.standard_errors.get(name).copied()
    }

    /// Linear predictor `intercept + Σ coef · standardized feature` per row.
    pub fn linear_predictor(&self, ds: &AnalysisDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        let raw = RawColumns::of(ds);
        let x = design_matrix(&raw, rows, &self.feature_set, &self.standardization)?;
        let mut beta = vec![self.intercept];
        for name in self.feature_set.column_names() {
            beta.push(*self.coefficients.get(&name).ok_or(ModelError::UnknownFeature(name))?);
        }
        Ok((0..x.nrows())
            .map(|i| x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Propensity scores, clamped to `[1e-12, 1 − 1e-12]`.
    pub fn predict(&self, ds: &AnalysisDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .linear_predictor(ds, rows)?
            .into_iter()
            .map(|eta| sigmoid(eta).clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR))
            .collect())
    }

    /// |standardized coefficient| per design column, largest first.
    pub fn feature_importance(&self) -> Vec<FeatureImportance> {
        let mut out: Vec<FeatureImportance> = self
            .coefficients
            .iter()
            .map(|(k, v)| FeatureImportance { feature: k.clone(), importance: v.abs() })
            .collect();
        out.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.feature.cmp(&b.feature)));
        out
    }
}

pub fn fit(
    ds: &AnalysisDataset,
    rows: &[usize],
    features: &FeatureSet,
    config: &FitConfig,
) -> Result<PropensityModel, ModelError> {
    PropensityModel::fit(ds, rows, features, config)
}

pub fn predict(model: &PropensityModel, ds: &AnalysisDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
    model.predict(ds, rows)
}

pub fn evaluate(
    model: &PropensityModel,
    ds: &AnalysisDataset,
    rows: &[usize],
    split: EvalSplit,
) -> Result<ModelScore, ModelError> {
    let scores = model.predict(ds, rows)?;
    let labels = labels_for(ds, rows)?;
    evaluate_scores(&scores, &labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, CovariateSpec, DatasetSchema};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(cols: Vec<(CovariateSpec, Vec<f64>)>, d: Vec<u8>) -> AnalysisDataset {
        let n = d.len();
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: Some("d".into()),
            date: None,
            covariates: cols.iter().map(|c| c.0.clone()).collect(),
        };
        AnalysisDataset::from_parts(
            schema,
            (0..n).map(|i| format!("{i:05}")).collect(),
            cols.into_iter().map(|c| ColumnData::Numeric(c.1)).collect(),
            vec![0.0; n],
            Some(d),
            None,
        )
        .unwrap()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn zero_coefficients_score_one_half() {
        let ds = dataset(vec![(CovariateSpec::continuous("x"), vec![1.0, 2.0, 3.0, 4.0])], vec![1, 0, 1, 0]);
        let model = PropensityModel {
            feature_set: FeatureSet::main_effects(["x"]).unwrap(),
            intercept: 0.0,
            coefficients: [("x".to_string(), 0.0)].into(),
            standard_errors: BTreeMap::new(),
            standardization: vec![Standardization { feature: "x".into(), mean: 2.5, sd: 1.0 }],
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
            n_obs: 4,
            l2: 1e-6,
        };
        assert_eq!(model.predict(&ds, &all(4)).unwrap(), vec![0.5; 4]);

        // intercept 1, coefficient 1, standardized value 1 → sigmoid(2)
        let model = PropensityModel {
            intercept: 1.0,
            coefficients: [("x".to_string(), 1.0)].into(),
            standardization: vec![Standardization { feature: "x".into(), mean: 2.0, sd: 2.0 }],
            ..model
        };
        let s = model.predict(&ds, &[3]).unwrap()[0];
        assert!((s - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((s - 0.8808).abs() < 1e-4);
        // raw value 0 → standardized −1 → linear predictor 0
        let zero = dataset(vec![(CovariateSpec::continuous("x"), vec![0.0, 1.0])], vec![1, 0]);
        assert_eq!(model.predict(&zero, &[0]).unwrap()[0], 0.5);
    }

    #[test]
    fn independent_treatment_gives_null_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let ds = dataset(vec![(CovariateSpec::continuous("x"), x)], d);
        let m = fit(&ds, &all(n), &FeatureSet::main_effects(["x"]).unwrap(), &FitConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.intercept.abs() < 3.0 * m.standard_error(INTERCEPT).unwrap());
        assert!(m.coefficient("x").unwrap().abs() < 3.0 * m.standard_error("x").unwrap());
    }

    #[test]
    fn two_cell_logit_matches_closed_form() {
        // exact cell frequencies: z=1 → 80% treated, z=0 → 20% treated
        let mut z = Vec::new();
        let mut d = Vec::new();
        for (zv, treated) in [(1.0, 800), (0.0, 200)] {
            for i in 0..1000 {
                z.push(zv);
                d.push(u8::from(i < treated));
            }
        }
        let n = z.len();
        let ds = dataset(vec![(CovariateSpec::binary("z"), z)], d);
        let m = fit(&ds, &all(n), &FeatureSet::main_effects(["z"]).unwrap(), &FitConfig::default()).unwrap();
        let closed_form = 2.0 * 4.0f64.ln();
        assert!((m.coefficient("z").unwrap() - closed_form).abs() < 1e-4, "{m:?}");
        assert!((m.intercept - (0.25f64).ln()).abs() < 1e-4);
    }

    /// Brute-force maximizer of the same penalized likelihood over
    /// (intercept, slope) by successive grid refinement.
    fn grid_search(x: &[f64], y: &[f64], l2: f64) -> (f64, f64) {
        let objective = |a: f64, b: f64| -> f64 {
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| {
                    let eta = a + b * xi;
                    yi * eta - (1.0 + eta.exp()).ln()
                })
                .sum::<f64>()
                - 0.5 * l2 * b * b
        };
        let (mut ca, mut cb, mut half) = (0.0, 0.0, 8.0);
        for _ in 0..40 {
            let mut best = (f64::NEG_INFINITY, ca, cb);
            for i in 0..=40 {
                for j in 0..=40 {
                    let a = ca - half + 2.0 * half * i as f64 / 40.0;
                    let b = cb - half + 2.0 * half * j as f64 / 40.0;
                    let v = objective(a, b);
                    if v > best.0 {
                        best = (v, a, b);
                    }
                }
            }
            ca = best.1;
            cb = best.2;
            half *= 0.5;
        }
        (ca, cb)
    }

    #[test]
    fn six_row_fit_matches_grid_search() {
        let x = vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let d = vec![0, 1, 0, 0, 1, 1];
        let ds = dataset(vec![(CovariateSpec::continuous("x"), x.clone())], d.clone());
        let m = fit(&ds, &all(6), &FeatureSet::main_effects(["x"]).unwrap(), &FitConfig::default()).unwrap();
        // oracle works on the same standardized column
        let mean = x.iter().sum::<f64>() / 6.0;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        let xs: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
        let y: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
        let (a, b) = grid_search(&xs, &y, 1e-6);
        assert!((m.intercept - a).abs() < 1e-2, "{} vs {a}", m.intercept);
        assert!((m.coefficient("x").unwrap() - b).abs() < 1e-2, "{:?} vs {b}", m.coefficient("x"));
    }

    #[test]
    fn predict_is_monotone_in_positive_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<u8> = x.iter().map(|&v| u8::from(rng.random::<f64>() < sigmoid(1.5 * v))).collect();
        let ds = dataset(vec![(CovariateSpec::continuous("x"), x.clone())], d);
        let m = fit(&ds, &all(n), &FeatureSet::main_effects(["x"]).unwrap(), &FitConfig::default()).unwrap();
        assert!(m.coefficient("x").unwrap() > 0.0);
        let scores = m.predict(&ds, &all(n)).unwrap();
        let mut order: Vec<usize> = all(n);
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        for w in order.windows(2) {
            if x[w[0]] < x[w[1]] {
                assert!(scores[w[0]] <= scores[w[1]]);
            }
        }
        let imp = m.feature_importance();
        assert_eq!(imp[0].feature, "x");
    }

    #[test]
    fn errors_on_bad_inputs() {
        let ds = dataset(vec![(CovariateSpec::continuous("x"), vec![1.0, 1.0, 1.0, 2.0])], vec![1, 0, 1, 0]);
        let fs = FeatureSet::main_effects(["x"]).unwrap();
        assert_eq!(
            fit(&ds, &[0, 1, 2], &fs, &FitConfig::default()).unwrap_err(),
            ModelError::DegenerateFeature("x".into())
        );
        assert!(matches!(fit(&ds, &[0, 2], &fs, &FitConfig::default()), Err(ModelError::SingleClass { .. })));
        let missing = FeatureSet::main_effects(["q"]).unwrap();
        assert_eq!(fit(&ds, &[0, 1, 2, 3], &missing, &FitConfig::default()).unwrap_err(), ModelError::UnknownFeature("q".into()));
    }
}
