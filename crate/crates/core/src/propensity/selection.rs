use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::FitConfig;
use super::metrics::{Confusion, EvalSplit, ModelScore};
use super::model::{evaluate, PropensityModel};
use super::split::SplitIndex;
use super::{FeatureSet, ModelError};
use crate::dataset::AnalysisDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Largest number of covariates per stage-1 subset; `None` allows all.
    pub max_base_subset_size: Option<usize>,
    pub top_k: usize,
    /// 1 disables interaction search, 2 adds pairwise products.
    pub max_interaction_order: usize,
    /// Most interaction pairs added to one finalist.
    pub max_interaction_terms: usize,
    pub max_stage1_candidates: usize,
    pub max_interaction_variants: usize,
    pub fit: FitConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_base_subset_size: None,
            top_k: 5,
            max_interaction_order: 2,
            max_interaction_terms: 2,
            max_stage1_candidates: 4096,
            max_interaction_variants: 512,
            fit: FitConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.top_k == 0 {
            return Err(ModelError::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(1..=2).contains(&self.max_interaction_order) {
            return Err(ModelError::InvalidConfig("max_interaction_order must be 1 or 2".into()));
        }
        if self.max_base_subset_size == Some(0) {
            return Err(ModelError::InvalidConfig("max_base_subset_size must be at least 1".into()));
        }
        if self.max_stage1_candidates == 0 {
            return Err(ModelError::InvalidConfig("max_stage1_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// One scored candidate in the ranking table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub rank: usize,
    pub stage: u8,
    pub label: String,
    pub covariates: Vec<String>,
    pub feature_set: FeatureSet,
    pub n_terms: usize,
    pub test_auc: f64,
    pub test_f1: f64,
    pub test_confusion: Confusion,
    pub train_auc: f64,
    pub train_f1: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub stage: u8,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub stage1_candidates: usize,
    pub stage2_candidates: usize,
    /// Finalists whose interaction variants were cut at the variant cap.
    pub truncated_finalists: Vec<String>,
    pub ranking: Vec<CandidateRow>,
    pub failed: Vec<FailedCandidate>,
    pub chosen: FeatureSet,
    pub chosen_covariates: Vec<String>,
    /// The winner as fitted on the training rows.
    pub train_model: PropensityModel,
    pub train_score: ModelScore,
    pub test_score: ModelScore,
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// All k-combinations of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct Candidate {
    stage: u8,
    covariates: Vec<String>,
    features: FeatureSet,
}

struct Scored {
    row: CandidateRow,
    model: PropensityModel,
    train: ModelScore,
    test: ModelScore,
}

fn rank_order(a: &CandidateRow, b: &CandidateRow) -> Ordering {
    b.test_auc
        .total_cmp(&a.test_auc)
        .then_with(|| b.test_f1.total_cmp(&a.test_f1))
        .then_with(|| a.n_terms.cmp(&b.n_terms))
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| a.stage.cmp(&b.stage))
}

fn score_candidate(
    ds: &AnalysisDataset,
    split: &SplitIndex,
    c: &Candidate,
    fit: &FitConfig,
) -> Result<Scored, ModelError> {
    let model = PropensityModel::fit(ds, &split.train_rows, &c.features, fit)?;
    let train = evaluate(&model, ds, &split.train_rows, EvalSplit::Train)?;
    let test = evaluate(&model, ds, &split.test_rows, EvalSplit::Test)?;
    let row = CandidateRow {
        rank: 0,
        stage: c.stage,
        label: c.features.label(),
        covariates: c.covariates.clone(),
        feature_set: c.features.clone(),
        n_terms: c.features.n_terms(),
        test_auc: test.auc,
        test_f1: test.f1,
        test_confusion: test.confusion,
        train_auc: train.auc,
        train_f1: train.f1,
        converged: model.converged,
    };
    Ok(Scored { row, model, train, test })
}

fn run_batch(
    ds: &AnalysisDataset,
    split: &SplitIndex,
    batch: &[Candidate],
    fit: &FitConfig,
    scored: &mut Vec<Scored>,
    failed: &mut Vec<FailedCandidate>,
) {
    let results: Vec<Result<Scored, ModelError>> =
        batch.par_iter().map(|c| score_candidate(ds, split, c, fit)).collect();
    for (c, r) in batch.iter().zip(results) {
        match r {
            Ok(s) => scored.push(s),
            Err(e) => failed.push(FailedCandidate { stage: c.stage, label: c.features.label(), error: e.to_string() }),
        }
    }
}

/// Exhaustive two-stage search. Stage 1 scores every subset of the given
/// covariates (a categorical covariate enters with all its indicator
/// columns); stage 2 adds pairwise interactions to the `top_k` subsets.
/// Candidates are fitted on the training rows and ranked on the test rows
/// by AUC, then F1, then fewer terms, then label.
pub fn select_model(
    ds: &AnalysisDataset,
    split: &SplitIndex,
    base_features: &[String],
    config: &SelectionConfig,
) -> Result<SelectionOutcome, ModelError> {
    config.validate()?;
    let names: BTreeSet<&String> = base_features.iter().collect();
    if names.is_empty() {
        return Err(ModelError::EmptyFeatureSet);
    }
    if names.len() != base_features.len() {
        return Err(ModelError::InvalidConfig("duplicate base feature".into()));
    }
    let all_groups = ds.expanded_groups();
    let groups: Vec<(String, Vec<String>)> = names
        .iter()
        .map(|n| {
            all_groups
                .iter()
                .find(|(g, _)| g == *n)
                .cloned()
                .ok_or_else(|| ModelError::UnknownFeature((*n).clone()))
        })
        .collect::<Result<_, _>>()?;

    let g = groups.len();
    let max_size = config.max_base_subset_size.unwrap_or(g).min(g);
    let total: u128 = (1..=max_size as u128).fold(0u128, |acc, k| acc.saturating_add(binomial(g as u128, k)));
    if total > config.max_stage1_candidates as u128 {
        return Err(ModelError::BudgetExceeded { candidates: total, budget: config.max_stage1_candidates });
    }

    let stage1: Vec<Candidate> = (1..=max_size)
        .flat_map(|k| combinations(g, k))
        .map(|idx| {
            let covariates: Vec<String> = idx.iter().map(|&i| groups[i].0.clone()).collect();
            let cols: Vec<String> = idx.iter().flat_map(|&i| groups[i].1.clone()).collect();
            Ok(Candidate { stage: 1, covariates, features: FeatureSet::main_effects(cols)? })
        })
        .collect::<Result<_, ModelError>>()?;

    let mut scored = Vec::new();
    let mut failed = Vec::new();
    run_batch(ds, split, &stage1, &config.fit, &mut scored, &mut failed);
    scored.sort_by(|a, b| rank_order(&a.row, &b.row));

    let mut stage2 = Vec::new();
    let mut truncated = Vec::new();
    if config.max_interaction_order >= 2 && config.max_interaction_terms > 0 {
        for finalist in scored.iter().take(config.top_k) {
            let fs = &finalist.row.feature_set;
            let source = |col: &String| {
                groups.iter().find(|(_, cols)| cols.contains(col)).map(|(name, _)| name.clone())
            };
            let mut pairs = Vec::new();
            for (i, a) in fs.base_features.iter().enumerate() {
                for b in &fs.base_features[i + 1..] {
                    if source(a) != source(b) {
                        pairs.push((a.clone(), b.clone()));
                    }
                }
            }
            let mut variants = 0usize;
            'sizes: for size in 1..=config.max_interaction_terms.min(pairs.len()) {
                for combo in combinations(pairs.len(), size) {
                    if variants == config.max_interaction_variants {
                        truncated.push(finalist.row.label.clone());
                        break 'sizes;
                    }
                    let chosen: Vec<(String, String)> = combo.iter().map(|&i| pairs[i].clone()).collect();
                    stage2.push(Candidate {
                        stage: 2,
                        covariates: finalist.row.covariates.clone(),
                        features: FeatureSet::new(fs.base_features.clone(), chosen)?,
                    });
                    variants += 1;
                }
            }
        }
        run_batch(ds, split, &stage2, &config.fit, &mut scored, &mut failed);
        scored.sort_by(|a, b| rank_order(&a.row, &b.row));
    }

    let stage1_candidates = stage1.len();
    let stage2_candidates = stage2.len();
    let mut iter = scored.into_iter();
    let best = iter.next().ok_or(ModelError::NoCandidates)?;
    let mut ranking = vec![best.row.clone()];
    ranking.extend(iter.map(|s| s.row));
    for (i, row) in ranking.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(SelectionOutcome {
        stage1_candidates,
        stage2_candidates,
        truncated_finalists: truncated,
        chosen: best.row.feature_set.clone(),
        chosen_covariates: best.row.covariates.clone(),
        ranking,
        failed,
        train_model: best.model,
        train_score: best.train,
        test_score: best.test,
    })
}
