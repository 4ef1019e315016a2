//! Scalar arithmetic expressions over a declared variable set.
//!
//! Dynamics and running costs are written as strings such as
//! `"0.5*(x1*u2 - x2*u1)"`. They are parsed once into an [`Expr`] tree,
//! evaluated at positional slots, and differentiated symbolically so the
//! transport and multiplier equations use exact partials.

mod diff;
mod parse;
mod simplify;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::{parse, ParseError};

/// Ordered list of variable names. The position of a name is the slot an
/// evaluation environment must fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSet {
    names: Vec<Arc<str>>,
}

impl VarSet {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            names: names.into_iter().map(|s| Arc::from(s.as_ref())).collect(),
        }
    }

    /// `t, x1..xd, u1..uk`, the layout every control problem uses.
    pub fn for_problem(state_dim: usize, control_dim: usize) -> Self {
        let mut names = vec!["t".to_string()];
        names.extend((1..=state_dim).map(|i| format!("x{i}")));
        names.extend((1..=control_dim).map(|a| format!("u{a}")));
        Self::new(names)
    }

    /// Only `t`; used for control pieces `u^a_i(t)`.
    pub fn time_only() -> Self {
        Self::new(["t"])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.as_ref() == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|n| n.as_ref())
    }

    fn var(&self, index: usize) -> Var {
        Var {
            index,
            name: self.names[index].clone(),
        }
    }
}

/// A variable reference: slot index plus the name it was written with.
#[derive(Debug, Clone, PartialEq)]
pub struct Var {
    pub index: usize,
    pub name: Arc<str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
    Abs,
}

impl UnaryOp {
    pub(crate) fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "sqrt" => Self::Sqrt,
            "tanh" => Self::Tanh,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    fn function_name(self) -> &'static str {
        match self {
            Self::Neg => "-",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Sqrt => "sqrt",
            Self::Tanh => "tanh",
            Self::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Neg => -v,
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Exp => v.exp(),
            Self::Sqrt => v.sqrt(),
            Self::Tanh => v.tanh(),
            Self::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            Self::Add => "+",
            Self::Sub => "-",
            Self::Mul => "*",
            Self::Div => "/",
        }
    }

    fn apply(self, l: f64, r: f64) -> f64 {
        match self {
            Self::Add => l + r,
            Self::Sub => l - r,
            Self::Mul => l * r,
            Self::Div => l / r,
        }
    }
}

/// Expression tree. Immutable once built; cloning is cheap enough for the
/// small formulas this crate handles.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Integer power with a non-negative exponent.
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no value bound for variable `{0}`")]
    MissingBinding(String),
    #[error("non-finite result in `{op}`")]
    NonFinite { op: &'static str },
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(l: Expr, r: Expr) -> Self {
        Expr::Binary(BinaryOp::Add, Box::new(l), Box::new(r))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(l: Expr, r: Expr) -> Self {
        Expr::Binary(BinaryOp::Sub, Box::new(l), Box::new(r))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(l: Expr, r: Expr) -> Self {
        Expr::Binary(BinaryOp::Mul, Box::new(l), Box::new(r))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(l: Expr, r: Expr) -> Self {
        Expr::Binary(BinaryOp::Div, Box::new(l), Box::new(r))
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    pub fn pow(e: Expr, n: u32) -> Self {
        Expr::Pow(Box::new(e), n)
    }

    /// Evaluate with positional slot values (`values[var.index]`).
    ///
    /// Every intermediate result is checked; a NaN or infinity anywhere in
    /// the tree is reported instead of propagated.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => {
                if !c.is_finite() {
                    return Err(EvalError::NonFinite { op: "const" });
                }
                return Ok(*c);
            }
            Expr::Var(var) => {
                return values
                    .get(var.index)
                    .copied()
                    .ok_or_else(|| EvalError::MissingBinding(var.name.to_string()));
            }
            Expr::Unary(op, e) => {
                let v = op.apply(e.eval(values)?);
                if !v.is_finite() {
                    return Err(EvalError::NonFinite {
                        op: op.function_name(),
                    });
                }
                v
            }
            Expr::Binary(op, l, r) => {
                let v = op.apply(l.eval(values)?, r.eval(values)?);
                if !v.is_finite() {
                    return Err(EvalError::NonFinite { op: op.symbol() });
                }
                v
            }
            Expr::Pow(e, n) => {
                let v = e.eval(values)?.powi(*n as i32);
                if !v.is_finite() {
                    return Err(EvalError::NonFinite { op: "^" });
                }
                v
            }
        };
        Ok(v)
    }

    /// Evaluate against a name-keyed environment.
    pub fn eval_env(&self, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let mut slots: Vec<f64> = Vec::new();
        let mut missing: Option<String> = None;
        self.visit_vars(&mut |var| {
            if slots.len() <= var.index {
                slots.resize(var.index + 1, f64::NAN);
            }
            match env.get(var.name.as_ref()) {
                Some(v) => slots[var.index] = *v,
                None => {
                    missing.get_or_insert_with(|| var.name.to_string());
                }
            }
        });
        if let Some(name) = missing {
            return Err(EvalError::MissingBinding(name));
        }
        self.eval(&slots)
    }

    /// Symbolic partial derivative with respect to the variable named `var`,
    /// simplified. Variables that do not occur differentiate to zero.
    pub fn differentiate(&self, var: &str) -> Expr {
        diff::derivative(self, var).simplify()
    }

    /// Constant folding plus 0/1 identity elimination.
    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    /// Names of all variables occurring in the tree, in first-seen order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit_vars(&mut |v| {
            if !out.iter().any(|n| n == v.name.as_ref()) {
                out.push(v.name.to_string());
            }
        });
        out
    }

    pub fn is_const(&self, value: f64) -> bool {
        matches!(self, Expr::Const(c) if *c == value)
    }

    fn visit_vars(&self, f: &mut impl FnMut(&Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(v),
            Expr::Unary(_, e) | Expr::Pow(e, _) => e.visit_vars(f),
            Expr::Binary(_, l, r) => {
                l.visit_vars(f);
                r.visit_vars(f);
            }
        }
    }

    /// Binding strength used when printing: higher binds tighter.
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            // A negative literal prints with a leading minus.
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // Debug formatting is the shortest representation that round-trips.
    if c == c.trunc() && c.abs() < 1e15 {
        write!(f, "{}", c)
    } else {
        write!(f, "{:?}", c)
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints an expression that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(v) => write!(f, "{}", v.name),
            Expr::Unary(UnaryOp::Neg, e) => {
                write!(f, "-")?;
                let parens = e.precedence() < 3 || matches!(**e, Expr::Const(_));
                write_wrapped(f, e, parens)
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.function_name()),
            Expr::Binary(op, l, r) => {
                let p = self.precedence();
                write_wrapped(f, l, l.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_wrapped(f, r, r.precedence() <= p)
            }
            Expr::Pow(e, n) => {
                write_wrapped(f, e, e.precedence() < 5)?;
                write!(f, "^{n}")
            }
        }
    }
}
