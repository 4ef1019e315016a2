use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ControlProblem, Diagnostic, SystemError};
use crate::expr::{parse, Expr, VarSet};

/// A control component in a control file: a literal or a formula in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PieceValue {
    Number(f64),
    Formula(String),
}

/// Serializable piecewise control, the shape of the control JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDef {
    /// Defaults to the problem horizon `[a, b]` (a single piece).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    pub pieces: Vec<Vec<PieceValue>>,
}

/// Open-loop control `u(t)` made of smooth pieces between breakpoints.
///
/// At a breakpoint the value comes from the piece that ends there (left
/// continuity); at `t = a` it comes from the first piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<Expr>>,
}

impl PiecewiseControl {
    pub fn new(
        problem: &ControlProblem,
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<Expr>>,
    ) -> Result<Self, SystemError> {
        let diags = check_layout(
            problem,
            &breakpoints,
            pieces.len(),
            pieces.iter().map(Vec::len),
        );
        if !diags.is_empty() {
            return Err(SystemError::Invalid(diags));
        }
        Ok(Self {
            breakpoints,
            pieces,
        })
    }

    /// `u(t) ≡ value` on the whole horizon.
    pub fn constant(problem: &ControlProblem, value: &[f64]) -> Result<Self, SystemError> {
        let (a, b) = problem.horizon();
        let piece = value.iter().map(|&v| Expr::Const(v)).collect();
        Self::new(problem, vec![a, b], vec![piece])
    }

    /// Single smooth piece given by formulas in `t`.
    pub fn formulas(problem: &ControlProblem, components: &[&str]) -> Result<Self, SystemError> {
        let (a, b) = problem.horizon();
        Self::from_def(
            problem,
            &ControlDef {
                breakpoints: Some(vec![a, b]),
                pieces: vec![components
                    .iter()
                    .map(|s| PieceValue::Formula(s.to_string()))
                    .collect()],
            },
        )
    }

    pub fn from_def(problem: &ControlProblem, def: &ControlDef) -> Result<Self, SystemError> {
        let (a, b) = problem.horizon();
        let breakpoints = def.breakpoints.clone().unwrap_or_else(|| vec![a, b]);
        let mut diags = check_layout(
            problem,
            &breakpoints,
            def.pieces.len(),
            def.pieces.iter().map(Vec::len),
        );
        let vars = VarSet::time_only();
        let mut pieces = Vec::with_capacity(def.pieces.len());
        for (i, piece) in def.pieces.iter().enumerate() {
            let mut exprs = Vec::with_capacity(piece.len());
            for (c, value) in piece.iter().enumerate() {
                match value {
                    PieceValue::Number(v) => exprs.push(Expr::Const(*v)),
                    PieceValue::Formula(src) => match parse(src, &vars) {
                        Ok(e) => exprs.push(e),
                        Err(error) => diags.push(Diagnostic::Expression {
                            location: format!("pieces[{i}][{c}]"),
                            error,
                        }),
                    },
                }
            }
            pieces.push(exprs);
        }
        if !diags.is_empty() {
            return Err(SystemError::Invalid(diags));
        }
        Ok(Self {
            breakpoints,
            pieces,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// Value of piece `i` at `t`, evaluated even slightly outside its interval.
    pub fn value_on_piece(&self, i: usize, t: f64) -> Result<DVector<f64>, SystemError> {
        let vals = self.pieces[i]
            .iter()
            .map(|e| {
                e.eval(&[t])
                    .map_err(|source| SystemError::Eval { t, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Index of the piece active at `t` under the left-continuous convention.
    pub fn piece_at(&self, t: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.iter().take_while(|&&bp| bp < t).count()
    }

    pub fn value(&self, t: f64) -> Result<DVector<f64>, SystemError> {
        self.value_on_piece(self.piece_at(t), t)
    }
}

fn check_layout(
    problem: &ControlProblem,
    breakpoints: &[f64],
    piece_count: usize,
    piece_lens: impl Iterator<Item = usize>,
) -> Vec<Diagnostic> {
    let (a, b) = problem.horizon();
    let k = problem.control_dim();
    let tol = 1e-12 * (b - a).abs().max(1.0);
    let mut diags = Vec::new();
    if breakpoints.len() < 2 {
        diags.push(Diagnostic::Breakpoints(
            "need at least two breakpoints".into(),
        ));
        return diags;
    }
    if breakpoints
        .iter()
        .any(|t| !t.is_finite() || *t < a - tol || *t > b + tol)
    {
        diags.push(Diagnostic::Breakpoints(format!(
            "breakpoint outside horizon [{a}, {b}]"
        )));
    }
    if (breakpoints[0] - a).abs() > tol || (breakpoints[breakpoints.len() - 1] - b).abs() > tol {
        diags.push(Diagnostic::Breakpoints(
            "first and last breakpoints must equal the horizon ends".into(),
        ));
    }
    if breakpoints
        .windows(2)
        .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        diags.push(Diagnostic::Breakpoints(
            "breakpoints must be strictly increasing".into(),
        ));
    }
    if piece_count != breakpoints.len() - 1 {
        diags.push(Diagnostic::PieceCount {
            expected: breakpoints.len() - 1,
            found: piece_count,
        });
    }
    for (piece, len) in piece_lens.enumerate() {
        if len != k {
            diags.push(Diagnostic::PieceDimension {
                piece,
                expected: k,
                found: len,
            });
        }
    }
    diags
}

/// Control used on one leg of a composite flow.
#[derive(Debug, Clone, PartialEq)]
pub enum LegControl {
    Constant(DVector<f64>),
    /// Components as formulas in the leg clock `t`.
    Formulas(Vec<Expr>),
}

impl LegControl {
    pub fn value(&self, t: f64) -> Result<DVector<f64>, SystemError> {
        match self {
            LegControl::Constant(u) => Ok(u.clone()),
            LegControl::Formulas(es) => es
                .iter()
                .map(|e| {
                    e.eval(&[t])
                        .map_err(|source| SystemError::Eval { t, source })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(DVector::from_vec),
        }
    }
}

/// One leg `φ^i_{t_i}` of a composite flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub control: LegControl,
    pub duration: f64,
    /// Clock value at the start of the leg. `None` continues from the
    /// previous leg's end (starting at `a` for the first leg).
    pub clock: Option<f64>,
}

impl Leg {
    pub fn constant(u: &[f64], duration: f64) -> Self {
        Self {
            control: LegControl::Constant(DVector::from_column_slice(u)),
            duration,
            clock: None,
        }
    }
}

/// Ordered legs; leg 0 runs first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompositeFlowSchedule {
    pub legs: Vec<Leg>,
}

impl CompositeFlowSchedule {
    pub fn new(legs: Vec<Leg>) -> Self {
        Self { legs }
    }

    pub fn total_duration(&self) -> f64 {
        self.legs.iter().map(|l| l.duration).sum()
    }

    pub fn check(&self, problem: &ControlProblem) -> Result<(), SystemError> {
        let mut diags = Vec::new();
        for (i, leg) in self.legs.iter().enumerate() {
            if !(leg.duration >= 0.0 && leg.duration.is_finite()) {
                diags.push(Diagnostic::Breakpoints(format!(
                    "leg {i} has negative or non-finite duration {}",
                    leg.duration
                )));
            }
            let len = match &leg.control {
                LegControl::Constant(u) => u.len(),
                LegControl::Formulas(es) => es.len(),
            };
            if len != problem.control_dim() {
                diags.push(Diagnostic::PieceDimension {
                    piece: i,
                    expected: problem.control_dim(),
                    found: len,
                });
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(SystemError::Invalid(diags))
        }
    }
}
