//! Treatment definition language.
//!
//! A closed boolean expression grammar over ingested columns, used to derive
//! a binary treatment indicator per unit:
//!
//! ```text
//! expr       = and_expr { "OR" and_expr } ;
//! and_expr   = unary { "AND" unary } ;
//! unary      = "NOT" unary | primary ;
//! primary    = "(" expr ")" | comparison ;
//! comparison = operand ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) operand ;
//! operand    = column | number | string ;
//! column     = ident | "`" { any char except "`" } "`" ;
//! ident      = ( letter | "_" ) { letter | digit | "_" | "." } ;
//! number     = [ "-" ] digits [ "." digits ] [ ( "e" | "E" ) [ "+" | "-" ] digits ] ;
//! string     = "'" { char | "\'" | "\\" } "'" | '"' { char | '\"' | "\\" } '"' ;
//! ```
//!
//! Keywords are case-insensitive. Numeric columns (continuous, binary)
//! compare against numbers; categorical columns compare with `==`/`!=`
//! against string literals naming a declared category.

mod eval;
mod lexer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{assign, check_binding, TreatmentAssignment};
use lexer::{is_plain_ident, tokenize, Spanned, Token};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("lexical error at offset {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("syntax error at offset {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("`{value}` is not a category of `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("degenerate treatment: {n_treated} treated, {n_control} control")]
    Degenerate { n_treated: usize, n_control: usize },
}

impl DslError {
    /// Byte offset into the source for lexical and syntax errors.
    pub fn offset(&self) -> Option<usize> {
        match self {
            DslError::Lex { offset, .. } | DslError::Syntax { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(String),
    Number(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentExpr {
    Compare { op: CmpOp, lhs: Operand, rhs: Operand },
    And(Box<TreatmentExpr>, Box<TreatmentExpr>),
    Or(Box<TreatmentExpr>, Box<TreatmentExpr>),
    Not(Box<TreatmentExpr>),
}

impl TreatmentExpr {
    pub fn compare(lhs: Operand, op: CmpOp, rhs: Operand) -> Self {
        TreatmentExpr::Compare { op, lhs, rhs }
    }

    pub fn and(a: TreatmentExpr, b: TreatmentExpr) -> Self {
        TreatmentExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: TreatmentExpr, b: TreatmentExpr) -> Self {
        TreatmentExpr::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: TreatmentExpr) -> Self {
        TreatmentExpr::Not(Box::new(a))
    }

    /// Every column the expression references.
    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            TreatmentExpr::Compare { lhs, rhs, .. } => {
                for side in [lhs, rhs] {
                    if let Operand::Column(c) = side {
                        out.insert(c.clone());
                    }
                }
            }
            TreatmentExpr::And(a, b) | TreatmentExpr::Or(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
            TreatmentExpr::Not(a) => a.collect_columns(out),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            TreatmentExpr::Or(..) => 1,
            TreatmentExpr::And(..) => 2,
            TreatmentExpr::Not(..) => 3,
            TreatmentExpr::Compare { .. } => 4,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let wrap = self.precedence() < min_prec;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            TreatmentExpr::Compare { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol())?,
            TreatmentExpr::And(a, b) => {
                a.write_at(f, 2)?;
                f.write_str(" AND ")?;
                b.write_at(f, 3)?;
            }
            TreatmentExpr::Or(a, b) => {
                a.write_at(f, 1)?;
                f.write_str(" OR ")?;
                b.write_at(f, 2)?;
            }
            TreatmentExpr::Not(a) => {
                f.write_str("NOT ")?;
                a.write_at(f, 3)?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) if is_plain_ident(c) => f.write_str(c),
            Operand::Column(c) => write!(f, "`{c}`"),
            Operand::Number(n) => write!(f, "{n}"),
            Operand::Str(s) => {
                f.write_str("'")?;
                for ch in s.chars() {
                    if ch == '\'' || ch == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{ch}")?;
                }
                f.write_str("'")
            }
        }
    }
}

/// Canonical text form; `parse(&expr.to_string()) == Ok(expr)`.
impl fmt::Display for TreatmentExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

pub fn parse(source: &str) -> Result<TreatmentExpr, DslError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let expr = p.expr()?;
    match p.peek() {
        Token::Eof => Ok(expr),
        _ => Err(p.unexpected(&["AND", "OR", "end of input"])),
    }
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
}

const OPERAND: [&str; 3] = ["column", "number", "string"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, expected: &[&str]) -> DslError {
        let (tok, offset) = &self.tokens[self.pos];
        DslError::Syntax {
            offset: *offset,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: tok.describe(),
        }
    }

    fn expr(&mut self) -> Result<TreatmentExpr, DslError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Token::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = TreatmentExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<TreatmentExpr, DslError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Token::And {
            self.bump();
            let rhs = self.unary()?;
            lhs = TreatmentExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<TreatmentExpr, DslError> {
        if *self.peek() == Token::Not {
            self.bump();
            return Ok(TreatmentExpr::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<TreatmentExpr, DslError> {
        match self.peek() {
            Token::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Token::RParen {
                    return Err(self.unexpected(&["`)`", "AND", "OR"]));
                }
                self.bump();
                Ok(inner)
            }
            Token::Ident(_) | Token::Number(_) | Token::Str(_) => {
                let lhs = self.operand(&OPERAND)?;
                let op = match self.peek() {
                    Token::Cmp(op) => *op,
                    _ => return Err(self.unexpected(&["comparison operator"])),
                };
                self.bump();
                let rhs = self.operand(&OPERAND)?;
                Ok(TreatmentExpr::compare(lhs, op, rhs))
            }
            _ => Err(self.unexpected(&["`(`", "NOT", "column", "number", "string"])),
        }
    }

    fn operand(&mut self, expected: &[&str]) -> Result<Operand, DslError> {
        let operand = match self.peek() {
            Token::Ident(name) => Operand::Column(name.clone()),
            Token::Number(n) => Operand::Number(*n),
            Token::Str(s) => Operand::Str(s.clone()),
            _ => return Err(self.unexpected(expected)),
        };
        self.bump();
        Ok(operand)
    }
}
