//! Stratified bootstrap of the ATT and its confidence intervals.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AnalysisDataset;
use crate::rng::{stream, Purpose};
use crate::stats::{quantile, sorted_copy};

/// Replicates may fail; above this share the whole bootstrap is rejected.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("n_samples must be at least 2")]
    TooFewSamples,
    #[error("alpha must be in (0, 1)")]
    InvalidAlpha,
    #[error("bootstrap unstable: {failures} of {n_samples} replicates failed")]
    Unstable { failures: usize, n_samples: usize },
    #[error("dataset has no treatment column")]
    NoTreatment,
    #[error("cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_samples: usize,
    /// Confidence level of the reported intervals.
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_samples: 200, alpha: 0.9 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.n_samples < 2 {
            return Err(BootstrapError::TooFewSamples);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BootstrapError::InvalidAlpha);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_samples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub att_point: f64,
    /// Successful replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    pub failures: Vec<ReplicateFailure>,
    pub ci_percentile: Interval,
    pub ci_basic: Interval,
    pub ci_symmetric: Interval,
}

/// Percentile, basic and symmetric intervals at confidence `alpha`.
///
/// The basic interval reflects the percentile endpoints around the point
/// estimate; the symmetric one is centred on the point estimate with the
/// larger of the two percentile half-widths.
pub fn intervals(att_point: f64, estimates: &[f64], alpha: f64) -> (Interval, Interval, Interval) {
    let sorted = sorted_copy(estimates);
    let lo = quantile(&sorted, (1.0 - alpha) / 2.0);
    let hi = quantile(&sorted, (1.0 + alpha) / 2.0);
    let half = (att_point - lo).max(hi - att_point).max(0.0);
    (
        Interval { lo, hi },
        Interval { lo: 2.0 * att_point - hi, hi: 2.0 * att_point - lo },
        Interval { lo: att_point - half, hi: att_point + half },
    )
}

/// Rows of one stratified resample: each arm drawn with replacement at its
/// original size.
pub fn resample_rows(ds: &AnalysisDataset, seed: u64, replicate: usize) -> Result<Vec<usize>, BootstrapError> {
    let (treated, control) = ds.arms().ok_or(BootstrapError::NoTreatment)?;
    let mut rng = stream(seed, Purpose::Bootstrap, replicate as u64);
    let mut rows = Vec::with_capacity(ds.len());
    for arm in [&treated, &control] {
        rows.extend((0..arm.len()).map(|_| arm[rng.random_range(0..arm.len())]));
    }
    Ok(rows)
}

/// Runs `replicate` on `n_samples` stratified resamples. Replicates run in
/// parallel but each has its own random stream, so output depends only on
/// `seed`. `progress` receives completed-replicate counts; `cancelled` is
/// polled before each replicate.
pub fn run_bootstrap<F>(
    ds: &AnalysisDataset,
    config: &BootstrapConfig,
    seed: u64,
    att_point: f64,
    replicate: F,
    progress: &(dyn Fn(usize) + Sync),
    cancelled: &(dyn Fn() -> bool + Sync),
) -> Result<BootstrapResult, BootstrapError>
where
    F: Fn(&AnalysisDataset) -> Result<f64, String> + Sync,
{
    config.validate()?;
    ds.arms().ok_or(BootstrapError::NoTreatment)?;
    let done = AtomicUsize::new(0);
    let outcomes: Vec<Option<Result<f64, String>>> = (0..config.n_samples)
        .into_par_iter()
        .map(|b| {
            if cancelled() {
                return None;
            }
            let rows = resample_rows(ds, seed, b).ok()?;
            let sample = ds.select_rows_unchecked(&rows);
            let r = replicate(&sample).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err("non-finite estimate".to_string())
                }
            });
            progress(done.fetch_add(1, Ordering::SeqCst) + 1);
            Some(r)
        })
        .collect();
    if cancelled() || outcomes.iter().any(Option::is_none) {
        return Err(BootstrapError::Cancelled);
    }
    let mut estimates = Vec::with_capacity(config.n_samples);
    let mut failures = Vec::new();
    for (b, r) in outcomes.into_iter().flatten().enumerate() {
        match r {
            Ok(v) => estimates.push(v),
            Err(error) => failures.push(ReplicateFailure { replicate: b, error }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * config.n_samples as f64 || estimates.is_empty() {
        return Err(BootstrapError::Unstable { failures: failures.len(), n_samples: config.n_samples });
    }
    let (ci_percentile, ci_basic, ci_symmetric) = intervals(att_point, &estimates, config.alpha);
    Ok(BootstrapResult {
        n_samples: config.n_samples,
        alpha: config.alpha,
        seed,
        att_point,
        estimates,
        failures,
        ci_percentile,
        ci_basic,
        ci_symmetric,
    })
}
