//! Logistic propensity models: fitting by penalized IRLS, scoring,
//! evaluation metrics, stratified train/test splits, and exhaustive
//! feature-set selection.

mod design;
pub mod logistic;
pub mod metrics;
mod model;
mod selection;
mod split;

use thiserror::Error;

pub use design::{FeatureSet, Standardization};
pub use logistic::FitConfig;
pub use metrics::{auc, evaluate_scores, Confusion, EvalSplit, ModelScore, PrPoint};
pub use model::{evaluate, fit, predict, FeatureImportance, PropensityModel, INTERCEPT};
pub use selection::{select_model, CandidateRow, FailedCandidate, SelectionConfig, SelectionOutcome};
pub use split::{split, SplitIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dataset has no treatment column")]
    NoTreatment,
    #[error("feature set must not be empty")]
    EmptyFeatureSet,
    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is constant on the fitting rows")]
    DegenerateFeature(String),
    #[error("need at least one row of each class, found {positives} treated and {negatives} control")]
    SingleClass { positives: usize, negatives: usize },
    #[error("treatment arm `{arm}` has {size} units; at least 2 are needed to stratify")]
    ArmTooSmall { arm: &'static str, size: usize },
    #[error("train_fraction must be in (0, 1)")]
    InvalidFraction,
    #[error("enumeration budget exceeded: {candidates} candidate subsets > {budget}; reduce the number of base features")]
    BudgetExceeded { candidates: u128, budget: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("every candidate model failed to fit")]
    NoCandidates,
    #[error("linear algebra failure: {0}")]
    Numerical(String),
}
