//! One analysis run from manifest to results: the seven stages in order,
//! with progress reporting and cooperative cancellation.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapConfig, BootstrapError, BootstrapResult, Interval};
use crate::dataset::{
    check_overlap, correlation_screen, filter_by_window, AnalysisDataset, ValidationReport,
};
use crate::diagnostics::{bin_counts, bin_edges, build_bundle, DiagnosticsBundle, DEFAULT_BINS};
use crate::dsl;
use crate::matching::{match_dataset, MatchConfig, MatchResult};
use crate::propensity::{
    evaluate, select_model, split, EvalSplit, FeatureImportance, FeatureSet, ModelScore, PropensityModel,
    SelectionConfig, SelectionOutcome,
};
use crate::sensitivity::{self, CellFit, SensitivityConfig, SensitivitySweep, INJECTED};
use crate::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    IngestingCharacteristics,
    AssigningTreatment,
    SelectingModel,
    Matching,
    Bootstrapping,
    Diagnostics,
    Sensitivity,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::IngestingCharacteristics,
        Stage::AssigningTreatment,
        Stage::SelectingModel,
        Stage::Matching,
        Stage::Bootstrapping,
        Stage::Diagnostics,
        Stage::Sensitivity,
    ];

    /// Share of the progress bar owned by this stage.
    pub fn weight(self) -> f64 {
        match self {
            Stage::IngestingCharacteristics => 0.02,
            Stage::AssigningTreatment => 0.03,
            Stage::SelectingModel => 0.30,
            Stage::Matching => 0.05,
            Stage::Bootstrapping => 0.50,
            Stage::Diagnostics => 0.05,
            Stage::Sensitivity => 0.05,
        }
    }

    /// Progress value at which this stage starts.
    pub fn start(self) -> f64 {
        Stage::ALL.iter().take_while(|s| **s != self).map(|s| s.weight()).sum()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::IngestingCharacteristics => "ingesting_characteristics",
            Stage::AssigningTreatment => "assigning_treatment",
            Stage::SelectingModel => "selecting_model",
            Stage::Matching => "matching",
            Stage::Bootstrapping => "bootstrapping",
            Stage::Diagnostics => "diagnostics",
            Stage::Sensitivity => "sensitivity",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Receives stage changes and overall progress in [0, 1]; polled for
/// cancellation between stages and replicates.
pub trait ProgressSink: Sync {
    fn stage(&self, _stage: Stage) {}
    fn progress(&self, _fraction: f64) {}
    fn cancelled(&self) -> bool {
        false
    }
}

pub struct NoProgress;

impl ProgressSink for NoProgress {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentSource {
    Column(String),
    Expression(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    /// Tail share trimmed from each arm's score range for common support.
    pub trim_quantile: f64,
    pub correlation_threshold: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { trim_quantile: 0.01, correlation_threshold: 0.9 }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

/// Full configuration of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Dataset reference: an uploaded dataset id for the service, a path
    /// for the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub treatment: TreatmentSource,
    /// Must name the dataset's outcome column; defaults to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_days: Option<u32>,
    /// End of the history window; defaults to the latest observation date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_date: Option<NaiveDate>,
    /// Covariates offered to model selection; defaults to every covariate
    /// not used by the treatment expression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_features: Option<Vec<String>>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub validation: ValidationSettings,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default = "default_bins")]
    pub diagnostics_bins: usize,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(treatment: TreatmentSource, seed: u64) -> Self {
        Self {
            dataset: None,
            treatment,
            outcome: None,
            history_days: None,
            reference_date: None,
            base_features: None,
            train_fraction: default_train_fraction(),
            bootstrap: BootstrapConfig::default(),
            matching: MatchConfig::default(),
            selection: SelectionConfig::default(),
            validation: ValidationSettings::default(),
            sensitivity: SensitivityConfig::default(),
            diagnostics_bins: DEFAULT_BINS,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        serde_json::from_str(text).map_err(|e| ManifestError::single("manifest", e.to_string()))
    }

    /// Static checks against a dataset: every name resolves, the treatment
    /// expression parses, binds and yields two non-empty arms, and every
    /// knob is in range.
    pub fn validate(&self, ds: &AnalysisDataset) -> Result<(), ManifestError> {
        self.check(ds, true)
    }

    fn check(&self, ds: &AnalysisDataset, arm_sizes: bool) -> Result<(), ManifestError> {
        let mut errors = BTreeMap::new();
        let mut err = |field: &str, msg: String| {
            errors.entry(field.to_string()).or_insert(msg);
        };
        if let Some(o) = &self.outcome {
            if o != ds.outcome_name() {
                err("outcome", format!("`{o}` is not the dataset outcome column `{}`", ds.outcome_name()));
            }
        }
        match &self.treatment {
            TreatmentSource::Column(c) => {
                if ds.treatment_name() != Some(c.as_str()) {
                    err("treatment.column", format!("`{c}` is not the dataset treatment column"));
                }
            }
            TreatmentSource::Expression(src) => match dsl::parse(src) {
                Ok(expr) => {
                    if let Err(e) = dsl::check_binding(&expr, ds) {
                        err("treatment.expression", e.to_string());
                    } else if arm_sizes {
                        // arm sizes are only known once the window is applied;
                        // a window that cannot be built is reported at run time
                        let windowed = match self.history_days {
                            Some(days) if days > 0 => self
                                .reference_date
                                .or(ds.max_date())
                                .and_then(|r| filter_by_window(ds, days, r).ok()),
                            _ => None,
                        };
                        if self.history_days.is_none() || windowed.is_some() {
                            if let Err(e) = dsl::assign(&expr, windowed.as_ref().unwrap_or(ds)) {
                                err("treatment.expression", e.to_string());
                            }
                        }
                    }
                }
                Err(e) => err("treatment.expression", e.to_string()),
            },
        }
        if let Some(days) = self.history_days {
            if days == 0 {
                err("history_days", "must be at least 1".into());
            } else if ds.dates().is_none() {
                err("history_days", "dataset has no observation date column".into());
            }
        }
        if self.reference_date.is_some() && self.history_days.is_none() {
            err("reference_date", "only meaningful together with history_days".into());
        }
        if let Some(features) = &self.base_features {
            if features.is_empty() {
                err("base_features", "must not be empty".into());
            }
            for f in features {
                if ds.covariate(f).is_none() {
                    err("base_features", format!("unknown covariate `{f}`"));
                }
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            err("train_fraction", "must be in (0, 1)".into());
        }
        if self.bootstrap.n_samples < 2 {
            err("bootstrap.n_samples", "must be at least 2".into());
        }
        if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
            err("bootstrap.alpha", "must be in (0, 1)".into());
        }
        if let Err(e) = self.matching.validate() {
            err("matching", e.to_string());
        }
        if let Err(e) = self.selection.validate() {
            err("selection", e.to_string());
        }
        if !(0.0..0.5).contains(&self.validation.trim_quantile) {
            err("validation.trim_quantile", "must be in [0, 0.5)".into());
        }
        let r = self.validation.correlation_threshold;
        if !(r > 0.0 && r < 1.0) {
            err("validation.correlation_threshold", "must be in (0, 1)".into());
        }
        if self.sensitivity.replicates_per_w == 0 {
            err("sensitivity.replicates_per_w", "must be at least 1".into());
        }
        if self.diagnostics_bins == 0 {
            err("diagnostics_bins", "must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ManifestError { field_errors: errors })
        }
    }
}

/// Field-level manifest problems, keyed by dotted field path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestError {
    pub field_errors: BTreeMap<String, String>,
}

impl ManifestError {
    pub fn single(field: &str, message: String) -> Self {
        Self { field_errors: [(field.to_string(), message)].into() }
    }
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.field_errors.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        write!(f, "invalid manifest: {}", parts.join("; "))
    }
}

impl std::error::Error for ManifestError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunError {
    Cancelled,
    Failed { stage: Stage, message: String },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Cancelled => f.write_str("run cancelled"),
            RunError::Failed { stage, message } => write!(f, "stage {stage} failed: {message}"),
        }
    }
}

impl std::error::Error for RunError {}

fn fail(stage: Stage) -> impl Fn(String) -> RunError {
    move |message| RunError::Failed { stage, message }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub sample_size: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_in_support: usize,
    pub excluded_outside_support: usize,
    pub n_matched: usize,
    pub n_control_used: usize,
    pub unmatched: usize,
    pub days_considered: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSummary {
    pub source: String,
    /// Column name, or the expression in canonical form.
    pub definition: String,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// The selected feature set refitted on every unit; its scores drive matching.
    pub model: PropensityModel,
    pub feature_importance: Vec<FeatureImportance>,
    pub train_score: ModelScore,
    pub test_score: ModelScore,
    pub full_score: ModelScore,
}

/// Everything a successful run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub seed: u64,
    pub att_point: f64,
    pub alpha: f64,
    pub ci_percentile: Interval,
    pub ci_basic: Interval,
    pub ci_symmetric: Interval,
    pub naive_difference: f64,
    pub counts: Counts,
    pub treatment: TreatmentSummary,
    pub bootstrap: BootstrapResult,
    pub bootstrap_histogram: Histogram,
    pub model: ModelReport,
    pub selection: SelectionOutcome,
    pub matching: MatchResult,
    pub diagnostics: DiagnosticsBundle,
    pub sensitivity: Option<SensitivitySweep>,
    pub validation: ValidationReport,
    pub summary_line: String,
}

/// Formats the one-line run summary.
pub fn summary_line(att: f64, alpha: f64, ci: Interval, n_treated: usize, n_matched: usize) -> String {
    format!(
        "ATT={att:.6} CI{level}=[{lo:.6},{hi:.6}] n_treated={n_treated} n_matched={n_matched}",
        level = (alpha * 100.0).round(),
        lo = ci.lo,
        hi = ci.hi,
    )
}

struct Tracker<'a> {
    sink: &'a dyn ProgressSink,
}

impl Tracker<'_> {
    fn enter(&self, stage: Stage) -> Result<(), RunError> {
        if self.sink.cancelled() {
            return Err(RunError::Cancelled);
        }
        self.sink.stage(stage);
        self.sink.progress(stage.start());
        Ok(())
    }

    fn within(&self, stage: Stage, fraction: f64) {
        self.sink.progress(stage.start() + stage.weight() * fraction.clamp(0.0, 1.0));
    }
}

/// Propensity scores, support and matches for one dataset under a fixed
/// feature set.
struct Fitted {
    model: PropensityModel,
    scores: Vec<f64>,
    validation_overlap: crate::dataset::OverlapReport,
    support: Vec<usize>,
}

fn fit_and_support(
    ds: &AnalysisDataset,
    features: &FeatureSet,
    manifest: &RunManifest,
) -> Result<Fitted, String> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let model = PropensityModel::fit(ds, &all, features, &manifest.selection.fit).map_err(|e| e.to_string())?;
    let scores = model.predict(ds, &all).map_err(|e| e.to_string())?;
    let t = ds.treatment().ok_or("dataset has no treatment")?;
    let st: Vec<f64> = scores.iter().zip(t).filter(|p| *p.1 == 1).map(|p| *p.0).collect();
    let sc: Vec<f64> = scores.iter().zip(t).filter(|p| *p.1 == 0).map(|p| *p.0).collect();
    let overlap = check_overlap(&st, &sc, manifest.validation.trim_quantile).map_err(|e| e.to_string())?;
    let support: Vec<usize> = all.into_iter().filter(|&r| overlap.in_support(scores[r])).collect();
    Ok(Fitted { model, scores, validation_overlap: overlap, support })
}

fn match_fitted(ds: &AnalysisDataset, fitted: &Fitted, manifest: &RunManifest) -> Result<MatchResult, String> {
    if !fitted.validation_overlap.overlap_pass {
        return Err("treated and control propensity scores have no common support".into());
    }
    match_dataset(ds, &fitted.scores, &fitted.support, &manifest.matching).map_err(|e| e.to_string())
}

/// Everything up to and including the point estimate.
struct Prepared {
    ds: AnalysisDataset,
    treatment: TreatmentSummary,
    days_considered: Option<u32>,
    selection: SelectionOutcome,
    fitted: Fitted,
    validation: ValidationReport,
    matches: MatchResult,
    naive_difference: f64,
}

fn naive_difference(ds: &AnalysisDataset) -> f64 {
    let (t, c) = ds.arms().unwrap_or_default();
    let y = ds.outcome();
    mean(&t.iter().map(|&r| y[r]).collect::<Vec<_>>()) - mean(&c.iter().map(|&r| y[r]).collect::<Vec<_>>())
}

/// Covariates offered to selection by default: all of them except those the
/// treatment expression reads (they would separate the arms by construction).
fn default_base_features(ds: &AnalysisDataset, excluded: &[String]) -> Vec<String> {
    ds.covariates().iter().map(|c| c.name.clone()).filter(|n| !excluded.contains(n)).collect()
}

fn prepare(ds: &AnalysisDataset, manifest: &RunManifest, tracker: &Tracker<'_>) -> Result<Prepared, RunError> {
    // arm sizes are checked where treatment is assigned, so that stage is reported
    manifest.check(ds, false).map_err(|e| fail(Stage::IngestingCharacteristics)(e.to_string()))?;

    tracker.enter(Stage::IngestingCharacteristics)?;
    let f = fail(Stage::IngestingCharacteristics);
    let (ds, days_considered) = match manifest.history_days {
        Some(days) => {
            let reference = manifest.reference_date.or(ds.max_date()).ok_or_else(|| f("no dates".into()))?;
            (filter_by_window(ds, days, reference).map_err(|e| f(e.to_string()))?, Some(days))
        }
        None => {
            let span = ds.dates().and_then(|d| {
                let lo = d.iter().min()?;
                let hi = d.iter().max()?;
                u32::try_from((*hi - *lo).num_days() + 1).ok()
            });
            (ds.clone(), span)
        }
    };
    let screen = correlation_screen(&ds, manifest.validation.correlation_threshold).map_err(|e| f(e.to_string()))?;

    tracker.enter(Stage::AssigningTreatment)?;
    let f = fail(Stage::AssigningTreatment);
    let (ds, treatment, excluded) = match &manifest.treatment {
        TreatmentSource::Column(c) => {
            let (t, ctl) = ds.arms().ok_or_else(|| f("dataset has no treatment column".into()))?;
            if t.is_empty() || ctl.is_empty() {
                return Err(f(format!("treatment column `{c}` is one-sided in the window")));
            }
            let summary = TreatmentSummary {
                source: "column".into(),
                definition: c.clone(),
                n_treated: t.len(),
                n_control: ctl.len(),
            };
            (ds, summary, Vec::new())
        }
        TreatmentSource::Expression(src) => {
            let expr = dsl::parse(src).map_err(|e| f(e.to_string()))?;
            let assignment = dsl::assign(&expr, &ds).map_err(|e| f(e.to_string()))?;
            let name = ds.treatment_name().unwrap_or("treatment").to_string();
            let summary = TreatmentSummary {
                source: "expression".into(),
                definition: assignment.expression.clone(),
                n_treated: assignment.n_treated,
                n_control: assignment.n_control,
            };
            let ds = ds.with_treatment(&name, assignment.values).map_err(|e| f(e.to_string()))?;
            (ds, summary, expr.columns().into_iter().collect())
        }
    };

    tracker.enter(Stage::SelectingModel)?;
    let f = fail(Stage::SelectingModel);
    let base = manifest.base_features.clone().unwrap_or_else(|| default_base_features(&ds, &excluded));
    if base.is_empty() {
        return Err(f("no covariates left for the propensity model".into()));
    }
    let split_index = split(&ds, manifest.train_fraction, manifest.seed).map_err(|e| f(e.to_string()))?;
    let selection = select_model(&ds, &split_index, &base, &manifest.selection).map_err(|e| f(e.to_string()))?;
    tracker.within(Stage::SelectingModel, 0.9);
    let fitted = fit_and_support(&ds, &selection.chosen, manifest).map_err(&f)?;
    let validation = ValidationReport::new(fitted.validation_overlap.clone(), screen);

    tracker.enter(Stage::Matching)?;
    let matches = match_fitted(&ds, &fitted, manifest).map_err(fail(Stage::Matching))?;
    let naive_difference = naive_difference(&ds);
    Ok(Prepared {
        ds,
        treatment,
        days_considered,
        selection,
        fitted,
        validation,
        matches,
        naive_difference,
    })
}

/// The statistic recomputed on each bootstrap resample: refit the frozen
/// feature set, re-trim, rematch.
fn replicate_att(sample: &AnalysisDataset, features: &FeatureSet, manifest: &RunManifest) -> Result<f64, String> {
    let fitted = fit_and_support(sample, features, manifest)?;
    Ok(match_fitted(sample, &fitted, manifest)?.att)
}

fn sensitivity_cell(aug: &AnalysisDataset, features: &FeatureSet, manifest: &RunManifest) -> Result<CellFit, String> {
    let with_injected = features.with_base_feature(INJECTED).map_err(|e| e.to_string())?;
    let fitted = fit_and_support(aug, &with_injected, manifest)?;
    let matches = match_fitted(aug, &fitted, manifest)?;
    Ok(CellFit {
        coefficients: fitted.model.coefficients,
        standard_errors: fitted.model.standard_errors,
        att: matches.att,
    })
}

fn run_sweep(p: &Prepared, manifest: &RunManifest, tracker: &Tracker<'_>) -> Result<SensitivitySweep, RunError> {
    let features = &p.selection.chosen;
    sensitivity::sweep(
        &p.ds,
        manifest.sensitivity.target,
        manifest.sensitivity.replicates_per_w,
        manifest.seed,
        |aug| sensitivity_cell(aug, features, manifest),
        &|done, total| tracker.within(Stage::Sensitivity, done as f64 / total as f64),
        &|| tracker.sink.cancelled(),
    )
    .map_err(|e| match e {
        sensitivity::SensitivityError::Cancelled => RunError::Cancelled,
        e => fail(Stage::Sensitivity)(e.to_string()),
    })
}

/// Runs the full analysis. Output depends only on the dataset and manifest.
pub fn execute(ds: &AnalysisDataset, manifest: &RunManifest, sink: &dyn ProgressSink) -> Result<RunResults, RunError> {
    let tracker = Tracker { sink };
    let p = prepare(ds, manifest, &tracker)?;

    tracker.enter(Stage::Bootstrapping)?;
    let features = &p.selection.chosen;
    let n = manifest.bootstrap.n_samples;
    let boot = run_bootstrap(
        &p.ds,
        &manifest.bootstrap,
        manifest.seed,
        p.matches.att,
        |sample| replicate_att(sample, features, manifest),
        &|done| tracker.within(Stage::Bootstrapping, done as f64 / n as f64),
        &|| sink.cancelled(),
    )
    .map_err(|e| match e {
        BootstrapError::Cancelled => RunError::Cancelled,
        e => fail(Stage::Bootstrapping)(e.to_string()),
    })?;

    tracker.enter(Stage::Diagnostics)?;
    let f = fail(Stage::Diagnostics);
    let model_columns = features.column_names();
    let diagnostics = build_bundle(
        &p.ds,
        &p.fitted.scores,
        &p.fitted.support,
        &p.matches,
        manifest.diagnostics_bins,
        &model_columns,
    )
    .map_err(|e| f(e.to_string()))?;
    let bootstrap_histogram = {
        let lo = boot.estimates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = boot.estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edges = bin_edges(lo, hi, manifest.diagnostics_bins);
        Histogram { counts: bin_counts(&edges, &boot.estimates), edges }
    };
    let all: Vec<usize> = (0..p.ds.len()).collect();
    let model_report = ModelReport {
        feature_importance: p.fitted.model.feature_importance(),
        train_score: p.selection.train_score.clone(),
        test_score: p.selection.test_score.clone(),
        full_score: evaluate(&p.fitted.model, &p.ds, &all, EvalSplit::Full).map_err(|e| f(e.to_string()))?,
        model: p.fitted.model.clone(),
    };

    let sweep = if manifest.sensitivity.enabled {
        tracker.enter(Stage::Sensitivity)?;
        Some(run_sweep(&p, manifest, &tracker)?)
    } else {
        None
    };
    if sink.cancelled() {
        return Err(RunError::Cancelled);
    }

    let (n_treated, n_control) = (p.treatment.n_treated, p.treatment.n_control);
    let counts = Counts {
        sample_size: p.ds.len(),
        n_treated,
        n_control,
        n_in_support: p.fitted.support.len(),
        excluded_outside_support: p.ds.len() - p.fitted.support.len(),
        n_matched: p.matches.n_treated_matched,
        n_control_used: p.matches.n_control_used,
        unmatched: p.matches.unmatched_treated.len(),
        days_considered: p.days_considered,
    };
    let summary = summary_line(p.matches.att, boot.alpha, boot.ci_percentile, n_treated, counts.n_matched);
    Ok(RunResults {
        seed: manifest.seed,
        att_point: p.matches.att,
        alpha: boot.alpha,
        ci_percentile: boot.ci_percentile,
        ci_basic: boot.ci_basic,
        ci_symmetric: boot.ci_symmetric,
        naive_difference: p.naive_difference,
        counts,
        treatment: p.treatment,
        bootstrap: boot,
        bootstrap_histogram,
        model: model_report,
        selection: p.selection,
        matching: p.matches,
        diagnostics,
        sensitivity: sweep,
        validation: p.validation,
        summary_line: summary,
    })
}

/// Runs selection and matching, then only the sensitivity sweep.
pub fn execute_sensitivity(
    ds: &AnalysisDataset,
    manifest: &RunManifest,
    sink: &dyn ProgressSink,
) -> Result<SensitivitySweep, RunError> {
    let tracker = Tracker { sink };
    let p = prepare(ds, manifest, &tracker)?;
    tracker.enter(Stage::Sensitivity)?;
    run_sweep(&p, manifest, &tracker)
}

