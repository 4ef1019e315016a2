//! Fixed-time control problems `dx/dt = ρ(t, x, u)` with running cost `L`,
//! written in one global chart `ℝ × ℝ^d` with a fixed control fiber.

mod catalog;
mod control;
mod problem;

pub use catalog::{catalog, catalog_entries, CatalogEntry};
pub use control::{
    CompositeFlowSchedule, ControlDef, Leg, LegControl, PieceValue, PiecewiseControl,
};
pub use problem::{validate, ControlProblem, Diagnostic, Fiber, Jacobians, ProblemDef};

use thiserror::Error;

use crate::expr::EvalError;

/// Relative tolerance for box-fiber bounds; integration can graze a bound by rounding.
pub const FIBER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("unknown catalog problem `{0}`")]
    UnknownProblem(String),
    #[error("invalid problem: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("control {u:?} at t = {t} lies outside the fiber")]
    FiberViolation { t: f64, u: Vec<f64> },
    #[error("expected a vector of length {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
}

fn join(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
