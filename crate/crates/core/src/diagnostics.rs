//! Balance diagnostics comparing treated and control groups before and
//! after matching, shaped for charting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::{AnalysisDataset, ColumnData, CovariateKind};
use crate::matching::MatchResult;
use crate::stats::{mean, quantile, sorted_copy, variance};

pub const BALANCE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_BINS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("empty {0} group")]
    EmptyGroup(&'static str),
    #[error("zero pooled variance")]
    ZeroPooledVariance,
    #[error("need at least 2 values per group")]
    TooFewValues,
    #[error("both groups have zero variance")]
    DegenerateVariance,
    #[error("bins must be at least 1")]
    InvalidBins,
    #[error("score vector has {got} entries for {expected} rows")]
    ScoreLength { expected: usize, got: usize },
}

fn nonempty(t: &[f64], c: &[f64]) -> Result<(), DiagError> {
    if t.is_empty() {
        return Err(DiagError::EmptyGroup("treated"));
    }
    if c.is_empty() {
        return Err(DiagError::EmptyGroup("control"));
    }
    Ok(())
}

/// Standardized mean difference against an externally supplied pooled sd.
pub fn smd_with_pooled(treated: &[f64], control: &[f64], pooled_sd: f64) -> Result<f64, DiagError> {
    nonempty(treated, control)?;
    let diff = mean(treated) - mean(control);
    if pooled_sd > 0.0 {
        Ok(diff / pooled_sd)
    } else if diff == 0.0 {
        Ok(0.0)
    } else {
        Err(DiagError::ZeroPooledVariance)
    }
}

pub fn pooled_sd(treated: &[f64], control: &[f64]) -> f64 {
    ((variance(treated) + variance(control)) / 2.0).sqrt()
}

/// `(mean_t − mean_c) / sqrt((var_t + var_c) / 2)` with n−1 variances.
pub fn smd(treated: &[f64], control: &[f64]) -> Result<f64, DiagError> {
    smd_with_pooled(treated, control, pooled_sd(treated, control))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_ttest(treated: &[f64], control: &[f64]) -> Result<TTest, DiagError> {
    if treated.len() < 2 || control.len() < 2 {
        return Err(DiagError::TooFewValues);
    }
    let (n1, n2) = (treated.len() as f64, control.len() as f64);
    let (a, b) = (variance(treated) / n1, variance(control) / n2);
    if a + b <= 0.0 {
        return Err(DiagError::DegenerateVariance);
    }
    let t = (mean(treated) - mean(control)) / (a + b).sqrt();
    let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| DiagError::DegenerateVariance)?;
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TTest { t, p, df })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub in_model: bool,
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
    pub ttest_before: Option<TTest>,
    pub ttest_after: Option<TTest>,
    pub balanced_after: bool,
    /// Why a statistic is missing, when one is.
    pub notes: Vec<String>,
}

/// Equal-width bin edges; values equal to the last edge land in the last bin.
pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect()
}

pub fn bin_counts(edges: &[f64], values: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0; bins];
    for &v in values {
        let i = (((v - lo) / (hi - lo)) * bins as f64).floor();
        let i = if i.is_finite() { (i.max(0.0) as usize).min(bins - 1) } else { 0 };
        // guard against rounding at interior edges
        let i = if v < edges[i] && i > 0 { i - 1 } else if i + 1 < bins && v >= edges[i + 1] { i + 1 } else { i };
        counts[i] += 1;
    }
    counts
}

/// Four histograms over shared edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub name: String,
    pub edges: Vec<f64>,
    pub treated_before: Vec<usize>,
    pub control_before: Vec<usize>,
    pub treated_after: Vec<usize>,
    pub control_after: Vec<usize>,
}

impl HistogramSet {
    fn build(name: &str, edges: Vec<f64>, groups: &Groups<'_>, values: &[f64]) -> Self {
        let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| values[r]).collect() };
        Self {
            name: name.to_string(),
            treated_before: bin_counts(&edges, &pick(groups.treated_before)),
            control_before: bin_counts(&edges, &pick(groups.control_before)),
            treated_after: bin_counts(&edges, &pick(&groups.treated_after)),
            control_after: bin_counts(&edges, &pick(&groups.control_after)),
            edges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyRow {
    pub level: String,
    pub treated_before: usize,
    pub control_before: usize,
    pub treated_after: usize,
    pub control_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub covariate: String,
    pub rows: Vec<ContingencyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl GroupSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted_copy(values);
        Some(Self {
            n: s.len(),
            mean: mean(&s),
            sd: variance(&s).sqrt(),
            min: s[0],
            q25: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q75: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub covariate: String,
    pub treated_before: Option<GroupSummary>,
    pub control_before: Option<GroupSummary>,
    pub treated_after: Option<GroupSummary>,
    pub control_after: Option<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsBundle {
    pub bins: usize,
    pub balance_threshold: f64,
    pub balance: Vec<BalanceRow>,
    pub densities: Vec<HistogramSet>,
    pub score_hist: HistogramSet,
    pub contingency: Vec<ContingencyTable>,
    pub summary: Vec<CovariateSummary>,
}

/// Row sets for the four series. After-matching controls appear once per use.
struct Groups<'a> {
    treated_before: &'a [usize],
    control_before: &'a [usize],
    treated_after: Vec<usize>,
    control_after: Vec<usize>,
}

fn balance_row(name: &str, in_model: bool, values: &[f64], g: &Groups<'_>) -> BalanceRow {
    let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| values[r]).collect() };
    let (tb, cb) = (pick(g.treated_before), pick(g.control_before));
    let (ta, ca) = (pick(&g.treated_after), pick(&g.control_after));
    let mut notes = Vec::new();
    let mut keep = |label: &str, r: Result<f64, DiagError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    };
    let pooled = pooled_sd(&tb, &cb);
    let smd_before = keep("smd_before", smd_with_pooled(&tb, &cb, pooled));
    let smd_after = keep("smd_after", smd_with_pooled(&ta, &ca, pooled));
    let mut keep_t = |label: &str, r: Result<TTest, DiagError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    };
    let ttest_before = keep_t("ttest_before", welch_ttest(&tb, &cb));
    let ttest_after = keep_t("ttest_after", welch_ttest(&ta, &ca));
    BalanceRow {
        covariate: name.to_string(),
        in_model,
        balanced_after: smd_after.is_some_and(|s| s.abs() < BALANCE_THRESHOLD),
        smd_before,
        smd_after,
        ttest_before,
        ttest_after,
        notes,
    }
}

/// Builds every diagnostic. `before_rows` are the in-support rows; the
/// after series come from `matches`. `model_columns` marks balance rows
/// whose covariate entered the propensity model.
pub fn build_bundle(
    ds: &AnalysisDataset,
    scores: &[f64],
    before_rows: &[usize],
    matches: &MatchResult,
    bins: usize,
    model_columns: &[String],
) -> Result<DiagnosticsBundle, DiagError> {
    if bins == 0 {
        return Err(DiagError::InvalidBins);
    }
    if scores.len() != ds.len() {
        return Err(DiagError::ScoreLength { expected: ds.len(), got: scores.len() });
    }
    if matches.pairs.is_empty() {
        return Err(DiagError::EmptyGroup("matched treated"));
    }
    let t = ds.treatment().ok_or(DiagError::EmptyGroup("treated"))?;
    let treated_before: Vec<usize> = before_rows.iter().copied().filter(|&r| t[r] == 1).collect();
    let control_before: Vec<usize> = before_rows.iter().copied().filter(|&r| t[r] == 0).collect();
    if treated_before.is_empty() {
        return Err(DiagError::EmptyGroup("treated"));
    }
    if control_before.is_empty() {
        return Err(DiagError::EmptyGroup("control"));
    }
    let groups = Groups {
        treated_before: &treated_before,
        control_before: &control_before,
        treated_after: matches.pairs.iter().map(|m| m.row).collect(),
        control_after: matches.pairs.iter().flat_map(|m| m.controls.iter().map(|c| c.row)).collect(),
    };

    let columns = ds.expanded_columns();
    let mut balance: Vec<BalanceRow> = columns
        .iter()
        .map(|c| balance_row(&c.name, model_columns.contains(&c.name), &c.values, &groups))
        .collect();
    // interaction terms of the model are balanced on their raw products
    for term in model_columns.iter().filter(|t| !columns.iter().any(|c| &c.name == *t)) {
        let Some((a, b)) = term.split_once(':') else { continue };
        let find = |n: &str| columns.iter().find(|c| c.name == n);
        if let (Some(a), Some(b)) = (find(a), find(b)) {
            let product: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
            balance.push(balance_row(term, true, &product, &groups));
        }
    }

    let densities = columns
        .iter()
        .filter(|c| c.kind == CovariateKind::Continuous)
        .map(|c| {
            let pooled: Vec<f64> = before_rows.iter().map(|&r| c.values[r]).collect();
            let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            HistogramSet::build(&c.name, bin_edges(lo, hi, bins), &groups, &c.values)
        })
        .collect();

    let score_hist = HistogramSet::build("propensity_score", bin_edges(0.0, 1.0, bins), &groups, scores);

    let mut contingency = Vec::new();
    for spec in ds.covariates() {
        let (levels, codes): (Vec<String>, Vec<usize>) = match ds.covariate(&spec.name) {
            Some((_, ColumnData::Categorical(v))) => (spec.categories.clone(), v.iter().map(|&c| c as usize).collect()),
            Some((_, ColumnData::Numeric(v))) if spec.kind == CovariateKind::Binary => {
                (vec!["0".into(), "1".into()], v.iter().map(|&x| usize::from(x == 1.0)).collect())
            }
            _ => continue,
        };
        let count = |rows: &[usize], level: usize| rows.iter().filter(|&&r| codes[r] == level).count();
        contingency.push(ContingencyTable {
            covariate: spec.name.clone(),
            rows: levels
                .iter()
                .enumerate()
                .map(|(i, level)| ContingencyRow {
                    level: level.clone(),
                    treated_before: count(groups.treated_before, i),
                    control_before: count(groups.control_before, i),
                    treated_after: count(&groups.treated_after, i),
                    control_after: count(&groups.control_after, i),
                })
                .collect(),
        });
    }

    let summary = columns
        .iter()
        .map(|c| {
            let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| c.values[r]).collect() };
            CovariateSummary {
                covariate: c.name.clone(),
                treated_before: GroupSummary::of(&pick(groups.treated_before)),
                control_before: GroupSummary::of(&pick(groups.control_before)),
                treated_after: GroupSummary::of(&pick(&groups.treated_after)),
                control_after: GroupSummary::of(&pick(&groups.control_after)),
            }
        })
        .collect();

    Ok(DiagnosticsBundle {
        bins,
        balance_threshold: BALANCE_THRESHOLD,
        balance,
        densities,
        score_hist,
        contingency,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smd_examples() {
        assert_eq!(smd(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let v = smd(&[2.0, 4.0], &[1.0, 3.0]).unwrap();
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(smd(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), -v);
        assert_eq!(smd(&[1.0, 1.0], &[2.0, 2.0]).unwrap_err(), DiagError::ZeroPooledVariance);
        assert_eq!(smd(&[1.0, 1.0], &[1.0]).unwrap(), 0.0);
    }

    /// Student-t density integrated by composite Simpson's rule.
    fn t_tail_two_sided(t: f64, df: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn welch_matches_formula() {
        let r = welch_ttest(&[10.0, 12.0, 14.0], &[1.0, 2.0, 3.0]).unwrap();
        let t = 10.0 / (5.0f64 / 3.0).sqrt();
        let df = 50.0 / 17.0;
        assert!((r.t - t).abs() < 1e-10);
        assert!((r.df - df).abs() < 1e-10);
        assert!((r.p - t_tail_two_sided(t, df)).abs() < 1e-8, "{} vs {}", r.p, t_tail_two_sided(t, df));
        let same = welch_ttest(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let swapped = welch_ttest(&[1.0, 2.0, 3.0], &[10.0, 12.0, 14.0]).unwrap();
        assert_eq!(swapped.p, r.p);
        assert_eq!(welch_ttest(&[1.0, 1.0], &[2.0, 2.0]).unwrap_err(), DiagError::DegenerateVariance);
        assert_eq!(welch_ttest(&[1.0], &[2.0, 3.0]).unwrap_err(), DiagError::TooFewValues);
    }

    #[test]
    fn unit_interval_bins() {
        let e = bin_edges(0.0, 1.0, 10);
        assert_eq!(e.len(), 11);
        for (i, x) in e.iter().enumerate() {
            assert!((x - i as f64 / 10.0).abs() < 1e-12);
        }
        assert_eq!(bin_counts(&e, &[0.0, 0.05, 0.1, 0.999, 1.0]), vec![2, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(bin_edges(3.0, 3.0, 2), vec![2.5, 3.0, 3.5]);
    }

    proptest! {
        #[test]
        fn histogram_counts_cover_all(values in prop::collection::vec(-1e3f64..1e3, 1..200), bins in 1usize..40) {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = bin_edges(lo, hi, bins);
            let c = bin_counts(&e, &values);
            prop_assert_eq!(c.iter().sum::<usize>(), values.len());
        }

        #[test]
        fn smd_affine_invariant(
            t in prop::collection::vec(-10.0f64..10.0, 2..30),
            c in prop::collection::vec(-10.0f64..10.0, 2..30),
            a in -100.0f64..100.0,
            b in 0.01f64..50.0,
        ) {
            if let Ok(base) = smd(&t, &c) {
                let f = |v: &Vec<f64>| v.iter().map(|x| a + b * x).collect::<Vec<_>>();
                let moved = smd(&f(&t), &f(&c)).unwrap();
                prop_assert!((moved - base).abs() < 1e-6 * (1.0 + base.abs()));
                prop_assert_eq!(smd(&c, &t).unwrap(), -base);
            }
        }

        #[test]
        fn welch_t_symmetric(
            t in prop::collection::vec(-10.0f64..10.0, 2..20),
            c in prop::collection::vec(-10.0f64..10.0, 2..20),
        ) {
            if let (Ok(a), Ok(b)) = (welch_ttest(&t, &c), welch_ttest(&c, &t)) {
                prop_assert_eq!(a.t, -b.t);
                prop_assert!((a.p - b.p).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a.p));
            }
        }
    }
}
