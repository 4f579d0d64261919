use serde::{Deserialize, Serialize};

use super::{CmpOp, DslError, Operand, TreatmentExpr};
use crate::dataset::{AnalysisDataset, ColumnData};

/// Per-unit treatment indicator derived from an expression, in dataset row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub expression: String,
    pub values: Vec<u8>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl TreatmentAssignment {
    /// `(unit_id, indicator)` pairs.
    pub fn pairs<'a>(&'a self, ds: &'a AnalysisDataset) -> impl Iterator<Item = (&'a str, u8)> + 'a {
        ds.unit_ids().iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

enum Num<'a> {
    Column(&'a [f64]),
    Const(f64),
}

impl Num<'_> {
    fn at(&self, row: usize) -> f64 {
        match self {
            Num::Column(v) => v[row],
            Num::Const(c) => *c,
        }
    }
}

enum Cat<'a> {
    Column { codes: &'a [u32], labels: &'a [String] },
    Const(&'a str),
}

impl Cat<'_> {
    fn at(&self, row: usize) -> &str {
        match self {
            Cat::Column { codes, labels } => &labels[codes[row] as usize],
            Cat::Const(s) => s,
        }
    }
}

enum Bound<'a> {
    Num { op: CmpOp, lhs: Num<'a>, rhs: Num<'a> },
    Cat { equal: bool, lhs: Cat<'a>, rhs: Cat<'a> },
    And(Box<Bound<'a>>, Box<Bound<'a>>),
    Or(Box<Bound<'a>>, Box<Bound<'a>>),
    Not(Box<Bound<'a>>),
}

impl Bound<'_> {
    fn eval(&self, row: usize) -> bool {
        match self {
            Bound::Num { op, lhs, rhs } => op.holds(lhs.at(row), rhs.at(row)),
            Bound::Cat { equal, lhs, rhs } => (lhs.at(row) == rhs.at(row)) == *equal,
            Bound::And(a, b) => a.eval(row) && b.eval(row),
            Bound::Or(a, b) => a.eval(row) || b.eval(row),
            Bound::Not(a) => !a.eval(row),
        }
    }
}

enum Side<'a> {
    Num(Num<'a>),
    Cat(Cat<'a>, Option<(&'a str, &'a [String])>),
}

fn bind_operand<'a>(operand: &'a Operand, ds: &'a AnalysisDataset) -> Result<Side<'a>, DslError> {
    Ok(match operand {
        Operand::Number(n) => Side::Num(Num::Const(*n)),
        Operand::Str(s) => Side::Cat(Cat::Const(s), None),
        Operand::Column(name) => match ds.covariate(name) {
            Some((_, ColumnData::Numeric(v))) => Side::Num(Num::Column(v)),
            Some((spec, ColumnData::Categorical(codes))) => Side::Cat(
                Cat::Column { codes, labels: &spec.categories },
                Some((spec.name.as_str(), &spec.categories)),
            ),
            None => return Err(DslError::UnknownColumn(name.clone())),
        },
    })
}

fn bind<'a>(expr: &'a TreatmentExpr, ds: &'a AnalysisDataset) -> Result<Bound<'a>, DslError> {
    Ok(match expr {
        TreatmentExpr::Compare { op, lhs, rhs } => match (bind_operand(lhs, ds)?, bind_operand(rhs, ds)?) {
            (Side::Num(l), Side::Num(r)) => Bound::Num { op: *op, lhs: l, rhs: r },
            (Side::Cat(l, lcol), Side::Cat(r, rcol)) => {
                let equal = match op {
                    CmpOp::Eq => true,
                    CmpOp::Ne => false,
                    other => {
                        return Err(DslError::TypeMismatch(format!(
                            "`{}` needs numeric operands, found strings in `{expr}`",
                            other.symbol()
                        )))
                    }
                };
                // a literal compared with a categorical column must name a declared level
                for (lit, col) in [(&l, rcol), (&r, lcol)] {
                    if let (Cat::Const(value), Some((column, labels))) = (lit, col) {
                        if !labels.iter().any(|c| c == value) {
                            return Err(DslError::UnknownCategory {
                                column: column.to_string(),
                                value: value.to_string(),
                            });
                        }
                    }
                }
                Bound::Cat { equal, lhs: l, rhs: r }
            }
            _ => {
                return Err(DslError::TypeMismatch(format!(
                    "cannot compare a number with a string in `{expr}`"
                )))
            }
        },
        TreatmentExpr::And(a, b) => Bound::And(Box::new(bind(a, ds)?), Box::new(bind(b, ds)?)),
        TreatmentExpr::Or(a, b) => Bound::Or(Box::new(bind(a, ds)?), Box::new(bind(b, ds)?)),
        TreatmentExpr::Not(a) => Bound::Not(Box::new(bind(a, ds)?)),
    })
}

/// Check that every column and category in `expr` resolves against `ds`.
pub fn check_binding(expr: &TreatmentExpr, ds: &AnalysisDataset) -> Result<(), DslError> {
    bind(expr, ds).map(|_| ())
}

/// Evaluate `expr` row by row: true → treated (1), false → control (0).
pub fn assign(expr: &TreatmentExpr, ds: &AnalysisDataset) -> Result<TreatmentAssignment, DslError> {
    let bound = bind(expr, ds)?;
    let values: Vec<u8> = (0..ds.len()).map(|row| u8::from(bound.eval(row))).collect();
    let n_treated = values.iter().filter(|&&v| v == 1).count();
    let n_control = values.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(DslError::Degenerate { n_treated, n_control });
    }
    Ok(TreatmentAssignment { expression: expr.to_string(), values, n_treated, n_control })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_str, CovariateSpec, DatasetSchema};
    use crate::dsl::parse;
    use proptest::prelude::*;

    fn dataset(x: &[f64], country: &[&str]) -> AnalysisDataset {
        let schema = DatasetSchema {
            unit_id: "id".into(),
            outcome: "y".into(),
            treatment: None,
            date: None,
            covariates: vec![
                CovariateSpec::continuous("x"),
                CovariateSpec::categorical("country", ["NL", "UK", "DE"]),
                CovariateSpec::categorical("home", ["UK", "NL"]),
            ],
        };
        let mut csv = String::from("id,y,x,country,home\n");
        for (i, (v, c)) in x.iter().zip(country).enumerate() {
            csv.push_str(&format!("u{i},0,{v},{c},NL\n"));
        }
        ingest_str(&csv, &schema).unwrap()
    }

    #[test]
    fn assigns_row_by_row() {
        let ds = dataset(&[-1.0, 2.0, 3.0], &["NL", "NL", "UK"]);
        let a = assign(&parse("x > 0").unwrap(), &ds).unwrap();
        assert_eq!(a.values, vec![0, 1, 1]);
        assert_eq!((a.n_treated, a.n_control), (2, 1));
        let pairs: Vec<_> = a.pairs(&ds).collect();
        assert_eq!(pairs[0], ("u0", 0));
    }

    #[test]
    fn tautology_is_degenerate() {
        let ds = dataset(&[-1.0, 2.0, 3.0], &["NL", "NL", "UK"]);
        let err = assign(&parse("x == x").unwrap(), &ds).unwrap_err();
        assert_eq!(err, DslError::Degenerate { n_treated: 3, n_control: 0 });
        assert!(err.to_string().starts_with("degenerate treatment"));
    }

    #[test]
    fn unknown_column_is_named() {
        let ds = dataset(&[1.0, 2.0], &["NL", "UK"]);
        assert_eq!(assign(&parse("zz > 1").unwrap(), &ds).unwrap_err(), DslError::UnknownColumn("zz".into()));
    }

    #[test]
    fn categorical_comparisons() {
        let ds = dataset(&[1.0, 2.0, 3.0], &["NL", "UK", "DE"]);
        let a = assign(&parse("country == 'UK' OR x >= 3").unwrap(), &ds).unwrap();
        assert_eq!(a.values, vec![0, 1, 1]);
        // column against column compares labels across covariates
        let a = assign(&parse("country == home").unwrap(), &ds).unwrap();
        assert_eq!(a.values, vec![1, 0, 0]);
        assert!(matches!(assign(&parse("country == 'FR'").unwrap(), &ds), Err(DslError::UnknownCategory { .. })));
        assert!(matches!(assign(&parse("country < 'UK'").unwrap(), &ds), Err(DslError::TypeMismatch(_))));
        assert!(matches!(assign(&parse("x == 'UK'").unwrap(), &ds), Err(DslError::TypeMismatch(_))));
    }

    fn leaf() -> impl Strategy<Value = TreatmentExpr> {
        let op = prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::Lt),
            Just(CmpOp::Le),
            Just(CmpOp::Gt),
            Just(CmpOp::Ge)
        ];
        (op, -3i32..3).prop_map(|(op, c)| {
            TreatmentExpr::compare(Operand::Column("x".into()), op, Operand::Number(f64::from(c)))
        })
    }

    fn eval_all(e: &TreatmentExpr, ds: &AnalysisDataset) -> Vec<bool> {
        let b = bind(e, ds).unwrap();
        (0..ds.len()).map(|r| b.eval(r)).collect()
    }

    proptest! {
        #[test]
        fn de_morgan_holds(
            a in leaf().prop_recursive(3, 8, 2, |inner| prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| TreatmentExpr::and(a, b)),
                inner.prop_map(TreatmentExpr::not),
            ]),
            b in leaf(),
            xs in prop::collection::vec(-4i32..4, 1..20),
        ) {
            let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
            let c = vec!["NL"; x.len()];
            let ds = dataset(&x, &c);
            let lhs = TreatmentExpr::not(TreatmentExpr::and(a.clone(), b.clone()));
            let rhs = TreatmentExpr::or(TreatmentExpr::not(a), TreatmentExpr::not(b));
            prop_assert_eq!(eval_all(&lhs, &ds), eval_all(&rhs, &ds));
        }

        #[test]
        fn evaluation_is_per_unit(xs in prop::collection::vec(-4i32..4, 2..20), k in 0usize..20) {
            let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
            let mut rotated = x.clone();
            rotated.rotate_left(k % x.len());
            let c = vec!["NL"; x.len()];
            let e = parse("x > 0 AND NOT x == 2").unwrap();
            let v1 = eval_all(&e, &dataset(&x, &c));
            let mut v2 = eval_all(&e, &dataset(&rotated, &c));
            v2.rotate_right(k % x.len());
            prop_assert_eq!(v1, v2);
        }
    }
}
