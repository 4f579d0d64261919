use serde::{Deserialize, Serialize};

use super::{AnalysisDataset, DatasetError};
use crate::stats::{pearson, quantile, sorted_copy};

/// Score distribution summary for one treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSupport {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    /// Trimmed support `[lower, upper]` at the configured tail quantile.
    pub lower: f64,
    pub upper: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl GroupSupport {
    fn of(scores: &[f64], trim: f64) -> Self {
        let s = sorted_copy(scores);
        Self {
            n: s.len(),
            min: s[0],
            max: s[s.len() - 1],
            lower: quantile(&s, trim),
            upper: quantile(&s, 1.0 - trim),
            q25: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q75: quantile(&s, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub overlap_pass: bool,
    pub trim_quantile: f64,
    pub treated: GroupSupport,
    pub control: GroupSupport,
    /// Intersection of the two trimmed ranges, when non-empty.
    pub common_support: Option<(f64, f64)>,
}

impl OverlapReport {
    pub fn in_support(&self, score: f64) -> bool {
        self.common_support.is_some_and(|(lo, hi)| score >= lo && score <= hi)
    }
}

/// Common-support check on propensity scores: the trimmed ranges
/// `[q_trim, q_(1-trim)]` of the two arms must intersect.
pub fn check_overlap(
    scores_treated: &[f64],
    scores_control: &[f64],
    trim_quantile: f64,
) -> Result<OverlapReport, DatasetError> {
    if scores_treated.is_empty() || scores_control.is_empty() {
        return Err(DatasetError::Invalid("overlap check needs scores for both groups".into()));
    }
    if !(0.0..0.5).contains(&trim_quantile) {
        return Err(DatasetError::Invalid("trim_quantile must be in [0, 0.5)".into()));
    }
    let valid = |s: &[f64]| s.iter().all(|p| (0.0..=1.0).contains(p));
    if !valid(scores_treated) || !valid(scores_control) {
        return Err(DatasetError::Invalid("propensity scores must lie in [0, 1]".into()));
    }
    let treated = GroupSupport::of(scores_treated, trim_quantile);
    let control = GroupSupport::of(scores_control, trim_quantile);
    let lo = treated.lower.max(control.lower);
    let hi = treated.upper.min(control.upper);
    let common_support = (lo <= hi).then_some((lo, hi));
    Ok(OverlapReport {
        overlap_pass: common_support.is_some(),
        trim_quantile,
        treated,
        control,
        common_support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationWarning {
    pub a: String,
    pub b: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationScreen {
    pub threshold: f64,
    pub warnings: Vec<CorrelationWarning>,
    pub degenerate_columns: Vec<String>,
}

/// Flag every pair of expanded covariate columns whose |Pearson r| reaches
/// `threshold`. Nothing is dropped; consolidation is left to the analyst.
pub fn correlation_screen(ds: &AnalysisDataset, threshold: f64) -> Result<CorrelationScreen, DatasetError> {
    if ds.len() < 2 {
        return Err(DatasetError::Invalid("correlation screen needs at least 2 rows".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DatasetError::Invalid("correlation threshold must be in (0, 1)".into()));
    }
    let columns = ds.expanded_columns();
    let mut degenerate_columns = Vec::new();
    let mut live = Vec::new();
    for col in &columns {
        if col.values.iter().all(|&v| v == col.values[0]) {
            degenerate_columns.push(col.name.clone());
        } else {
            live.push(col);
        }
    }
    let mut warnings = Vec::new();
    for i in 0..live.len() {
        for j in (i + 1)..live.len() {
            if let Some(r) = pearson(&live[i].values, &live[j].values) {
                if r.abs() >= threshold {
                    warnings.push(CorrelationWarning { a: live[i].name.clone(), b: live[j].name.clone(), r });
                }
            }
        }
    }
    Ok(CorrelationScreen { threshold, warnings, degenerate_columns })
}

/// Outcome of the assumption checks run before matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub overlap_pass: bool,
    pub overlap_detail: OverlapReport,
    pub consolidation_warnings: Vec<CorrelationWarning>,
    pub degenerate_columns: Vec<String>,
    /// Assumptions that cannot be tested from the data and are taken as given.
    pub declared_assumptions: Vec<String>,
}

impl ValidationReport {
    pub fn new(overlap: OverlapReport, screen: CorrelationScreen) -> Self {
        Self {
            overlap_pass: overlap.overlap_pass,
            overlap_detail: overlap,
            consolidation_warnings: screen.warnings,
            degenerate_columns: screen.degenerate_columns,
            declared_assumptions: vec![
                "unconfoundedness: potential outcomes are independent of treatment given the covariates (not testable)".into(),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, CovariateSpec, DatasetSchema};
    use proptest::prelude::*;

    fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn disjoint_support_fails() {
        let r = check_overlap(&[1.0; 5], &[0.0; 5], 0.01).unwrap();
        assert!(!r.overlap_pass);
        assert_eq!(r.common_support, None);
    }

    #[test]
    fn identical_ranges_pass() {
        let r = check_overlap(&uniform(0.3, 0.7, 50), &uniform(0.3, 0.7, 80), 0.01).unwrap();
        assert!(r.overlap_pass);
    }

    #[test]
    fn adjacent_ranges_without_trim_fail() {
        // treated [0.6, 0.9], control [0.1, 0.59]: max(lower)=0.6 > min(upper)=0.59
        let r = check_overlap(&uniform(0.6, 0.9, 31), &uniform(0.1, 0.59, 50), 0.0).unwrap();
        assert!(!r.overlap_pass);
        assert_eq!(r.treated.lower, 0.6);
        assert_eq!(r.control.upper, 0.59);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(check_overlap(&[], &[0.5], 0.01).is_err());
        assert!(check_overlap(&[1.2], &[0.5], 0.01).is_err());
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(
            a in prop::collection::vec(0.0f64..=1.0, 1..40),
            b in prop::collection::vec(0.0f64..=1.0, 1..40),
            trim in 0.0f64..0.2,
        ) {
            let ab = check_overlap(&a, &b, trim).unwrap();
            let ba = check_overlap(&b, &a, trim).unwrap();
            prop_assert_eq!(ab.overlap_pass, ba.overlap_pass);
            prop_assert_eq!(ab.common_support, ba.common_support);
        }
    }

    fn numeric_ds(cols: &[(&str, Vec<f64>)]) -> AnalysisDataset {
        let n = cols[0].1.len();
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: None,
            date: None,
            covariates: cols.iter().map(|(name, _)| CovariateSpec::continuous(*name)).collect(),
        };
        AnalysisDataset::from_parts(
            schema,
            (0..n).map(|i| i.to_string()).collect(),
            cols.iter().map(|(_, v)| ColumnData::Numeric(v.clone())).collect(),
            vec![0.0; n],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn identical_and_negated_columns_are_reported() {
        let x = vec![1.0, 2.0, 5.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let ds = numeric_ds(&[("x", x.clone()), ("x2", x), ("nx", neg), ("k", vec![4.0; 4])]);
        let s = correlation_screen(&ds, 0.9).unwrap();
        assert_eq!(s.degenerate_columns, vec!["k".to_string()]);
        let find = |a: &str, b: &str| s.warnings.iter().find(|w| w.a == a && w.b == b).map(|w| w.r);
        assert!((find("x", "x2").unwrap() - 1.0).abs() < 1e-15);
        assert!((find("x", "nx").unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_decides_reporting() {
        // Hand computation: x = 1..4 (mean 2.5), z = 1,2,3,100 (mean 26.5)
        // Sxy = (-1.5)(-25.5) + (-0.5)(-24.5) + (0.5)(-23.5) + (1.5)(73.5) = 149
        // Sxx = 5, Syy = 650.25 + 600.25 + 552.25 + 5402.25 = 7205
        // r = 149 / sqrt(5 * 7205) = 0.78502...
        let r_hand = 149.0 / (5.0f64 * 7205.0).sqrt();
        let ds = numeric_ds(&[("x", vec![1.0, 2.0, 3.0, 4.0]), ("z", vec![1.0, 2.0, 3.0, 100.0])]);
        assert!(correlation_screen(&ds, 0.8).unwrap().warnings.is_empty());
        let s = correlation_screen(&ds, 0.75).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!((s.warnings[0].r - r_hand).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn screen_ignores_row_order(
            rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 3..30),
            rotate in 0usize..30,
        ) {
            let cols = |rows: &[(f64, f64, f64)]| numeric_ds(&[
                ("a", rows.iter().map(|r| r.0).collect()),
                ("b", rows.iter().map(|r| r.1).collect()),
                ("c", rows.iter().map(|r| r.0 + 0.1 * r.2).collect()),
            ]);
            let mut shuffled = rows.clone();
            shuffled.reverse();
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
            let s1 = correlation_screen(&cols(&rows), 0.5).unwrap();
            let s2 = correlation_screen(&cols(&shuffled), 0.5).unwrap();
            let pairs = |s: &CorrelationScreen| s.warnings.iter().map(|w| (w.a.clone(), w.b.clone())).collect::<Vec<_>>();
            // pairs within 1e-9 of the threshold could flip on rounding alone
            let near = s1.warnings.iter().chain(&s2.warnings).any(|w| (w.r.abs() - 0.5).abs() < 1e-9);
            if !near {
                prop_assert_eq!(pairs(&s1), pairs(&s2));
            }
            for (w1, w2) in s1.warnings.iter().zip(&s2.warnings) {
                prop_assert!((w1.r - w2.r).abs() < 1e-12);
            }
            prop_assert_eq!(s1.degenerate_columns, s2.degenerate_columns);
        }
    }
}
