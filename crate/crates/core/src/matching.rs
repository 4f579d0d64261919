//! Nearest-neighbour matching on propensity scores and the ATT estimate.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AnalysisDataset;
use crate::stats::{logit, std_dev};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no {0} units to match")]
    EmptyGroup(&'static str),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("score {score} of unit `{id}` is outside (0, 1)")]
    InvalidScore { id: String, score: f64 },
    #[error("no treated unit found a control within the caliper ({n_treated} treated)")]
    NoneMatched { n_treated: usize },
    #[error("score vector has {got} entries for {expected} rows")]
    ScoreLength { expected: usize, got: usize },
}

/// Caliper on the absolute score gap. `LogitSd(m)` resolves to
/// `m × sd(logit(score))` over the units being matched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caliper {
    None,
    Absolute(f64),
    LogitSd(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub k: usize,
    pub with_replacement: bool,
    pub caliper: Caliper,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { k: 5, with_replacement: true, caliper: Caliper::LogitSd(0.2) }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.k == 0 {
            return Err(MatchError::InvalidConfig("k must be at least 1".into()));
        }
        match self.caliper {
            Caliper::Absolute(c) | Caliper::LogitSd(c) if !(c > 0.0 && c.is_finite()) => {
                Err(MatchError::InvalidConfig("caliper must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Caliper width for the given scores.
    pub fn resolve_caliper(&self, scores: &[f64]) -> Option<f64> {
        match self.caliper {
            Caliper::None => None,
            Caliper::Absolute(c) => Some(c),
            Caliper::LogitSd(m) => {
                let logits: Vec<f64> = scores.iter().map(|&s| logit(s)).collect();
                Some(m * std_dev(&logits))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit<'a> {
    pub id: &'a str,
    pub row: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedControl {
    pub unit_id: String,
    pub row: usize,
    pub score: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedUnit {
    pub unit_id: String,
    pub row: usize,
    pub score: f64,
    pub controls: Vec<MatchedControl>,
}

/// Matched sets in processing order plus the treated units left unmatched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairs {
    pub matched: Vec<MatchedUnit>,
    pub unmatched_treated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub k: usize,
    pub with_replacement: bool,
    pub caliper: Option<f64>,
    pub pairs: Vec<MatchedUnit>,
    pub unmatched_treated: Vec<String>,
    pub att: f64,
    pub n_treated_matched: usize,
    pub n_control_used: usize,
}

fn check_scores(units: &[Unit<'_>]) -> Result<(), MatchError> {
    match units.iter().find(|u| !(u.score > 0.0 && u.score < 1.0)) {
        Some(u) => Err(MatchError::InvalidScore { id: u.id.to_string(), score: u.score }),
        None => Ok(()),
    }
}

/// Key ordering controls by score, then id, then row. Scores are positive,
/// so their bit patterns sort numerically.
type Key = (u64, usize);

/// Greedy k-nearest matching. Treated units are taken by descending score
/// (ties by id, then row); each picks up to `k` controls by smallest gap,
/// ties by control id then row, within the caliper.
pub fn match_units(
    treated: &[Unit<'_>],
    controls: &[Unit<'_>],
    k: usize,
    with_replacement: bool,
    caliper: Option<f64>,
) -> Result<Pairs, MatchError> {
    if treated.is_empty() {
        return Err(MatchError::EmptyGroup("treated"));
    }
    if controls.is_empty() {
        return Err(MatchError::EmptyGroup("control"));
    }
    if k == 0 {
        return Err(MatchError::InvalidConfig("k must be at least 1".into()));
    }
    check_scores(treated)?;
    check_scores(controls)?;

    let mut ctrl: Vec<&Unit<'_>> = controls.iter().collect();
    ctrl.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(b.id)).then(a.row.cmp(&b.row)));
    let mut available: BTreeSet<Key> = ctrl.iter().enumerate().map(|(i, c)| (c.score.to_bits(), i)).collect();

    let mut order: Vec<&Unit<'_>> = treated.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(b.id)).then(a.row.cmp(&b.row)));

    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for t in order {
        let pivot: Key = (t.score.to_bits(), 0);
        let mut below = available.range(..pivot).rev().peekable();
        let mut above = available.range(pivot..).peekable();
        let gap = |key: &Key| (t.score - ctrl[key.1].score).abs();
        let within = |g: f64| caliper.is_none_or(|c| g <= c);
        // Walk outward, collecting every control whose gap does not exceed
        // the current k-th smallest; ties are then settled by the sort below.
        let mut picked: Vec<(f64, Key)> = Vec::new();
        loop {
            let next_below = below.peek().map(|k| gap(k));
            let next_above = above.peek().map(|k| gap(k));
            let next = match (next_below, next_above) {
                (None, None) => break,
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (Some(b), Some(a)) => b.min(a),
            };
            if !within(next) {
                break;
            }
            if picked.len() >= k {
                let mut gaps: Vec<f64> = picked.iter().map(|p| p.0).collect();
                gaps.sort_by(f64::total_cmp);
                if next > gaps[k - 1] {
                    break;
                }
            }
            let key = if next_below == Some(next) { *below.next().unwrap() } else { *above.next().unwrap() };
            picked.push((next, key));
        }
        picked.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| ctrl[a.1 .1].id.cmp(ctrl[b.1 .1].id))
                .then(ctrl[a.1 .1].row.cmp(&ctrl[b.1 .1].row))
        });
        picked.truncate(k);
        if picked.is_empty() {
            unmatched.push(t.id.to_string());
            continue;
        }
        if !with_replacement {
            for (_, key) in &picked {
                available.remove(key);
            }
        }
        matched.push(MatchedUnit {
            unit_id: t.id.to_string(),
            row: t.row,
            score: t.score,
            controls: picked
                .into_iter()
                .map(|(g, key)| {
                    let c = ctrl[key.1];
                    MatchedControl { unit_id: c.id.to_string(), row: c.row, score: c.score, gap: g }
                })
                .collect(),
        });
    }
    if matched.is_empty() {
        return Err(MatchError::NoneMatched { n_treated: treated.len() });
    }
    Ok(Pairs { matched, unmatched_treated: unmatched })
}

/// Mean over matched treated units of `Y_t − mean(Y of its controls)`.
pub fn estimate_att(outcome: &[f64], matched: &[MatchedUnit]) -> Result<f64, MatchError> {
    if matched.is_empty() {
        return Err(MatchError::NoneMatched { n_treated: 0 });
    }
    let total: f64 = matched
        .iter()
        .map(|m| {
            let controls: f64 = m.controls.iter().map(|c| outcome[c.row]).sum::<f64>() / m.controls.len() as f64;
            outcome[m.row] - controls
        })
        .sum();
    Ok(total / matched.len() as f64)
}

/// Matches the treated and control rows listed in `rows` using `scores`
/// (one per dataset row) and estimates the ATT.
pub fn match_dataset(
    ds: &AnalysisDataset,
    scores: &[f64],
    rows: &[usize],
    cfg: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    cfg.validate()?;
    if scores.len() != ds.len() {
        return Err(MatchError::ScoreLength { expected: ds.len(), got: scores.len() });
    }
    let t = ds.treatment().ok_or(MatchError::EmptyGroup("treated"))?;
    let ids = ds.unit_ids();
    let unit = |r: usize| Unit { id: ids[r].as_str(), row: r, score: scores[r] };
    let treated: Vec<Unit<'_>> = rows.iter().filter(|&&r| t[r] == 1).map(|&r| unit(r)).collect();
    let controls: Vec<Unit<'_>> = rows.iter().filter(|&&r| t[r] == 0).map(|&r| unit(r)).collect();
    let in_rows: Vec<f64> = rows.iter().map(|&r| scores[r]).collect();
    let caliper = cfg.resolve_caliper(&in_rows);
    let pairs = match_units(&treated, &controls, cfg.k, cfg.with_replacement, caliper)?;
    let att = estimate_att(ds.outcome(), &pairs.matched)?;
    let used: HashSet<usize> = pairs.matched.iter().flat_map(|m| m.controls.iter().map(|c| c.row)).collect();
    Ok(MatchResult {
        k: cfg.k,
        with_replacement: cfg.with_replacement,
        caliper,
        n_treated_matched: pairs.matched.len(),
        n_control_used: used.len(),
        pairs: pairs.matched,
        unmatched_treated: pairs.unmatched_treated,
        att,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn units<'a>(ids: &'a [String], scores: &[f64], offset: usize) -> Vec<Unit<'a>> {
        ids.iter().zip(scores).enumerate().map(|(i, (id, &s))| Unit { id, row: offset + i, score: s }).collect()
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:03}")).collect()
    }

    #[test]
    fn nearest_by_gap() {
        let t = names("t", 1);
        let c = names("c", 2);
        let p = match_units(&units(&t, &[0.5], 0), &units(&c, &[0.4, 0.61], 1), 1, true, None).unwrap();
        assert_eq!(p.matched[0].controls[0].unit_id, "c000");
        let p = match_units(&units(&t, &[0.5], 0), &units(&c, &[0.4, 0.6], 1), 2, true, None).unwrap();
        assert_eq!(p.matched[0].controls.len(), 2);
    }

    #[test]
    fn caliper_leaves_unmatched() {
        let t = names("t", 2);
        let c = names("c", 1);
        let p = match_units(&units(&t, &[0.9, 0.72], 0), &units(&c, &[0.7], 2), 1, true, Some(0.05)).unwrap();
        assert_eq!(p.unmatched_treated, vec!["t000"]);
        assert_eq!(p.matched.len(), 1);
        let err = match_units(&units(&t[..1], &[0.9], 0), &units(&c, &[0.7], 2), 1, true, Some(0.05));
        assert_eq!(err.unwrap_err(), MatchError::NoneMatched { n_treated: 1 });
    }

    #[test]
    fn equal_gaps_break_by_control_id() {
        let t = vec!["t".to_string()];
        let c = vec!["b".to_string(), "a".to_string()];
        let p = match_units(&units(&t, &[0.5], 0), &units(&c, &[0.25, 0.75], 1), 1, true, None).unwrap();
        assert_eq!(p.matched[0].controls[0].unit_id, "a");
    }

    #[test]
    fn without_replacement_consumes_controls() {
        let t = names("t", 2);
        let c = names("c", 2);
        let p = match_units(&units(&t, &[0.6, 0.5], 0), &units(&c, &[0.55, 0.1], 2), 1, false, None).unwrap();
        // the higher-scored treated unit goes first and takes 0.55
        assert_eq!(p.matched[0].unit_id, "t000");
        assert_eq!(p.matched[0].controls[0].unit_id, "c000");
        assert_eq!(p.matched[1].controls[0].unit_id, "c001");
    }

    fn matched(row: usize, controls: &[usize]) -> MatchedUnit {
        MatchedUnit {
            unit_id: format!("t{row}"),
            row,
            score: 0.5,
            controls: controls
                .iter()
                .map(|&r| MatchedControl { unit_id: format!("c{r}"), row: r, score: 0.5, gap: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn att_examples() {
        assert_eq!(estimate_att(&[3.0, 1.0, 1.0], &[matched(0, &[1, 2])]).unwrap(), 2.0);
        assert_eq!(estimate_att(&[5.0; 3], &[matched(0, &[1, 2])]).unwrap(), 0.0);
        // contrasts 2 and 4
        let y = [3.0, 5.0, 1.0];
        assert_eq!(estimate_att(&y, &[matched(0, &[2]), matched(1, &[2])]).unwrap(), 3.0);
        assert!(estimate_att(&y, &[]).is_err());
    }

    fn brute_nearest(t: f64, controls: &[(String, f64)]) -> String {
        controls
            .iter()
            .min_by(|a, b| (t - a.1).abs().total_cmp(&(t - b.1).abs()).then_with(|| a.0.cmp(&b.0)))
            .unwrap()
            .0
            .clone()
    }

    proptest! {
        #[test]
        fn k1_with_replacement_is_global_nearest(
            ts in prop::collection::vec(0.001f64..0.999, 1..60),
            cs in prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.25, 0.3, 0.5, 0.7, 0.75, 0.9]), 1..140),
        ) {
            let tid = names("t", ts.len());
            let cid = names("c", cs.len());
            let p = match_units(&units(&tid, &ts, 0), &units(&cid, &cs, ts.len()), 1, true, None).unwrap();
            let pool: Vec<(String, f64)> = cid.iter().cloned().zip(cs.iter().copied()).collect();
            prop_assert!(p.unmatched_treated.is_empty());
            for m in &p.matched {
                prop_assert_eq!(&m.controls[0].unit_id, &brute_nearest(m.score, &pool));
            }
        }

        #[test]
        fn invariant_to_input_order(
            ts in prop::collection::vec(0.01f64..0.99, 1..30),
            cs in prop::collection::vec(0.01f64..0.99, 1..60),
            k in 1usize..4,
            repl in any::<bool>(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let tid = names("t", ts.len());
            let cid = names("c", cs.len());
            let tu = units(&tid, &ts, 0);
            let cu = units(&cid, &cs, 100);
            let a = match_units(&tu, &cu, k, repl, Some(0.2)).unwrap_or_else(|_| Pairs { matched: vec![], unmatched_treated: vec![] });
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut tu2 = tu.clone();
            let mut cu2 = cu.clone();
            tu2.shuffle(&mut rng);
            cu2.shuffle(&mut rng);
            let b = match_units(&tu2, &cu2, k, repl, Some(0.2)).unwrap_or_else(|_| Pairs { matched: vec![], unmatched_treated: vec![] });
            prop_assert_eq!(a, b);
        }

        #[test]
        fn structural_invariants(
            ts in prop::collection::vec(0.01f64..0.99, 1..30),
            cs in prop::collection::vec(0.01f64..0.99, 1..60),
            k in 1usize..5,
            cal in 0.01f64..0.3,
        ) {
            let tid = names("t", ts.len());
            let cid = names("c", cs.len());
            if let Ok(p) = match_units(&units(&tid, &ts, 0), &units(&cid, &cs, 100), k, false, Some(cal)) {
                let mut seen = HashSet::new();
                for m in &p.matched {
                    prop_assert!(m.controls.len() <= k);
                    for c in &m.controls {
                        prop_assert!(c.gap <= cal);
                        prop_assert!(seen.insert(c.row));
                    }
                }
                prop_assert_eq!(p.matched.len() + p.unmatched_treated.len(), ts.len());
            }
        }

        #[test]
        fn att_location_and_scale(
            y in prop::collection::vec(-100.0f64..100.0, 6),
            shift in -50.0f64..50.0,
            scale in -5.0f64..5.0,
        ) {
            let m = [matched(0, &[3, 4]), matched(1, &[5]), matched(2, &[3, 5, 4])];
            let base = estimate_att(&y, &m).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
            prop_assert!((estimate_att(&shifted, &m).unwrap() - base).abs() < 1e-9);
            prop_assert!((estimate_att(&scaled, &m).unwrap() - scale * base).abs() < 1e-9);
        }
    }
}
