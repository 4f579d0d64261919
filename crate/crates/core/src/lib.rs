//! Propensity score matching workbench.
//!
//! The crate covers the whole analysis path for an observational study:
//! tabular ingestion and assumption checks ([`dataset`]), bespoke treatment
//! definitions ([`dsl`]), logistic propensity models with exhaustive
//! feature-set selection ([`propensity`]), one-to-many matching and the ATT
//! ([`matching`]), balance diagnostics ([`diagnostics`]), bootstrap
//! intervals ([`bootstrap`]), synthetic-confounder sensitivity sweeps
//! ([`sensitivity`]), and the staged job runner that ties them together
//! ([`pipeline`], [`engine`]).

pub mod bootstrap;
pub mod canonical;
pub mod dataset;
pub mod diagnostics;
pub mod dsl;
pub mod engine;
pub mod matching;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod synthetic;

pub use dataset::{AnalysisDataset, CovariateKind, CovariateSpec, DatasetSchema};
pub use pipeline::{execute, RunManifest, RunResults, Stage};

