use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SystemError, FIBER_TOL};
use crate::expr::{parse, EvalError, Expr, ParseError, VarSet};

/// Admissible control values at every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Fiber {
    Unconstrained,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Grid { points: Vec<Vec<f64>> },
}

impl Fiber {
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            Fiber::Unconstrained => u.iter().all(|v| v.is_finite()),
            Fiber::Box { lo, hi } => u.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| {
                v >= l - FIBER_TOL * l.abs().max(1.0) && v <= h + FIBER_TOL * h.abs().max(1.0)
            }),
            Fiber::Grid { points } => points.iter().any(|p| {
                let scale = 1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                p.iter()
                    .zip(u)
                    .all(|(a, b)| (a - b).abs() <= FIBER_TOL * scale)
            }),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Fiber::Unconstrained => "unconstrained",
            Fiber::Box { .. } => "box",
            Fiber::Grid { .. } => "grid",
        }
    }
}

/// Serializable problem description, the shape of the problem JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: [f64; 2],
    pub dynamics: Vec<String>,
    pub cost: String,
    pub fiber: Fiber,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_b: Option<Vec<f64>>,
}

impl ProblemDef {
    /// Same problem with running cost `factor · L`.
    pub fn with_cost_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.cost = format!("{factor:?}*({})", self.cost);
        out
    }
}

/// One violated invariant of a [`ProblemDef`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    ZeroStateDim,
    ZeroControlDim,
    EmptyHorizon {
        a: f64,
        b: f64,
    },
    DynamicsCount {
        expected: usize,
        found: usize,
    },
    Expression {
        location: String,
        error: ParseError,
    },
    FiberDimension {
        expected: usize,
        found: usize,
    },
    DegenerateFiberBound {
        component: usize,
        lo: f64,
        hi: f64,
    },
    EmptyGrid,
    EndpointDimension {
        which: &'static str,
        expected: usize,
        found: usize,
    },
    Breakpoints(String),
    PieceCount {
        expected: usize,
        found: usize,
    },
    PieceDimension {
        piece: usize,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ZeroStateDim => write!(f, "state_dim must be at least 1"),
            Diagnostic::ZeroControlDim => write!(f, "control_dim must be at least 1"),
            Diagnostic::EmptyHorizon { a, b } => {
                write!(f, "horizon [{a}, {b}] must satisfy a < b with finite ends")
            }
            Diagnostic::DynamicsCount { expected, found } => {
                write!(f, "expected {expected} dynamics expressions, found {found}")
            }
            Diagnostic::Expression { location, error } => match error {
                ParseError::UnknownVariable { name, .. } => {
                    write!(f, "unknown variable `{name}` in {location}")
                }
                other => write!(f, "{location}: {other}"),
            },
            Diagnostic::FiberDimension { expected, found } => {
                write!(f, "fiber has dimension {found}, control_dim is {expected}")
            }
            Diagnostic::DegenerateFiberBound { component, lo, hi } => write!(
                f,
                "degenerate fiber bound for u{}: lo = {lo} must be below hi = {hi}",
                component + 1
            ),
            Diagnostic::EmptyGrid => write!(f, "grid fiber has no points"),
            Diagnostic::EndpointDimension {
                which,
                expected,
                found,
            } => write!(f, "{which} has length {found}, expected {expected}"),
            Diagnostic::Breakpoints(msg) => write!(f, "{msg}"),
            Diagnostic::PieceCount { expected, found } => {
                write!(f, "expected {expected} control pieces, found {found}")
            }
            Diagnostic::PieceDimension {
                piece,
                expected,
                found,
            } => write!(
                f,
                "piece {piece} has {found} components, expected {expected}"
            ),
        }
    }
}

/// Returns every violated invariant; empty means the definition is usable.
pub fn validate(def: &ProblemDef) -> Vec<Diagnostic> {
    compile(def).err().unwrap_or_default()
}

struct Compiled {
    dynamics: Vec<Expr>,
    cost: Expr,
}

fn compile(def: &ProblemDef) -> Result<Compiled, Vec<Diagnostic>> {
    let d = def.state_dim;
    let k = def.control_dim;
    let mut diags = Vec::new();
    if d == 0 {
        diags.push(Diagnostic::ZeroStateDim);
    }
    if k == 0 {
        diags.push(Diagnostic::ZeroControlDim);
    }
    let [a, b] = def.horizon;
    if !(a.is_finite() && b.is_finite() && b > a) {
        diags.push(Diagnostic::EmptyHorizon { a, b });
    }
    if def.dynamics.len() != d {
        diags.push(Diagnostic::DynamicsCount {
            expected: d,
            found: def.dynamics.len(),
        });
    }
    let vars = VarSet::for_problem(d, k);
    let mut dynamics = Vec::with_capacity(d);
    for (i, src) in def.dynamics.iter().enumerate() {
        match parse(src, &vars) {
            Ok(e) => dynamics.push(e),
            Err(error) => diags.push(Diagnostic::Expression {
                location: format!("dynamics[{i}]"),
                error,
            }),
        }
    }
    let cost = match parse(&def.cost, &vars) {
        Ok(e) => Some(e),
        Err(error) => {
            diags.push(Diagnostic::Expression {
                location: "cost".into(),
                error,
            });
            None
        }
    };
    match &def.fiber {
        Fiber::Unconstrained => {}
        Fiber::Box { lo, hi } => {
            if lo.len() != k || hi.len() != k {
                diags.push(Diagnostic::FiberDimension {
                    expected: k,
                    found: lo.len().max(hi.len()),
                });
            }
            for (component, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                if l.partial_cmp(&h) != Some(std::cmp::Ordering::Less) {
                    diags.push(Diagnostic::DegenerateFiberBound {
                        component,
                        lo: l,
                        hi: h,
                    });
                }
            }
        }
        Fiber::Grid { points } => {
            if points.is_empty() {
                diags.push(Diagnostic::EmptyGrid);
            }
            if let Some(p) = points.iter().find(|p| p.len() != k) {
                diags.push(Diagnostic::FiberDimension {
                    expected: k,
                    found: p.len(),
                });
            }
        }
    }
    for (which, v) in [("x_a", &def.x_a), ("x_b", &def.x_b)] {
        if let Some(v) = v {
            if v.len() != d {
                diags.push(Diagnostic::EndpointDimension {
                    which,
                    expected: d,
                    found: v.len(),
                });
            }
        }
    }
    match (diags.is_empty(), cost) {
        (true, Some(cost)) => Ok(Compiled { dynamics, cost }),
        _ => Err(diags),
    }
}

/// Exact partials of the dynamics and cost evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// `∂ρ^i/∂x^j`, d×d.
    pub a: DMatrix<f64>,
    /// `∂ρ^i/∂u^a`, d×k.
    pub b: DMatrix<f64>,
    /// `∂L/∂x^j`.
    pub lx: DVector<f64>,
    /// `∂L/∂u^a`.
    pub lu: DVector<f64>,
}

/// A validated problem with its symbolic partials precomputed.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    def: ProblemDef,
    vars: VarSet,
    dynamics: Vec<Expr>,
    cost: Expr,
    // [i][j] = ∂ρ^i/∂x^j
    rho_x: Vec<Vec<Expr>>,
    // [i][a] = ∂ρ^i/∂u^a
    rho_u: Vec<Vec<Expr>>,
    cost_x: Vec<Expr>,
    cost_u: Vec<Expr>,
    // [i][a][b] = ∂²ρ^i/∂u^a∂u^b
    rho_uu: Vec<Vec<Vec<Expr>>>,
    cost_uu: Vec<Vec<Expr>>,
}

impl ControlProblem {
    pub fn new(def: ProblemDef) -> Result<Self, SystemError> {
        let Compiled { dynamics, cost } = compile(&def).map_err(SystemError::Invalid)?;
        let d = def.state_dim;
        let k = def.control_dim;
        let xs: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        let us: Vec<String> = (1..=k).map(|a| format!("u{a}")).collect();
        let grad = |e: &Expr, names: &[String]| -> Vec<Expr> {
            names.iter().map(|n| e.differentiate(n)).collect()
        };
        let rho_x = dynamics.iter().map(|e| grad(e, &xs)).collect();
        let rho_u: Vec<Vec<Expr>> = dynamics.iter().map(|e| grad(e, &us)).collect();
        let cost_x = grad(&cost, &xs);
        let cost_u = grad(&cost, &us);
        let rho_uu = rho_u
            .iter()
            .map(|row| row.iter().map(|e| grad(e, &us)).collect())
            .collect();
        let cost_uu = cost_u.iter().map(|e| grad(e, &us)).collect();
        Ok(Self {
            vars: VarSet::for_problem(d, k),
            def,
            dynamics,
            cost,
            rho_x,
            rho_u,
            cost_x,
            cost_u,
            rho_uu,
            cost_uu,
        })
    }

    pub fn def(&self) -> &ProblemDef {
        &self.def
    }

    pub fn name(&self) -> Option<&str> {
        self.def.name.as_deref()
    }

    pub fn state_dim(&self) -> usize {
        self.def.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.def.control_dim
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.def.horizon[0], self.def.horizon[1])
    }

    pub fn fiber(&self) -> &Fiber {
        &self.def.fiber
    }

    pub fn x_a(&self) -> Option<DVector<f64>> {
        self.def.x_a.as_ref().map(|v| DVector::from_column_slice(v))
    }

    pub fn x_b(&self) -> Option<DVector<f64>> {
        self.def.x_b.as_ref().map(|v| DVector::from_column_slice(v))
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn cost(&self) -> &Expr {
        &self.cost
    }

    /// Slot vector `[t, x1..xd, u1..uk]`, after the fiber check.
    pub(crate) fn slots(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
        let d = self.state_dim();
        let k = self.control_dim();
        if x.len() != d {
            return Err(SystemError::Dimension {
                expected: d,
                found: x.len(),
            });
        }
        if u.len() != k {
            return Err(SystemError::Dimension {
                expected: k,
                found: u.len(),
            });
        }
        if !self.def.fiber.contains(u) {
            return Err(SystemError::FiberViolation { t, u: u.to_vec() });
        }
        let mut s = Vec::with_capacity(1 + d + k);
        s.push(t);
        s.extend_from_slice(x);
        s.extend_from_slice(u);
        Ok(s)
    }

    fn eval(e: &Expr, slots: &[f64]) -> Result<f64, SystemError> {
        e.eval(slots)
            .map_err(|source: EvalError| SystemError::Eval {
                t: slots[0],
                source,
            })
    }

    pub(crate) fn velocity_from_slots(
        &self,
        slots: &[f64],
        out: &mut [f64],
    ) -> Result<(), SystemError> {
        for (o, e) in out.iter_mut().zip(&self.dynamics) {
            *o = Self::eval(e, slots)?;
        }
        Ok(())
    }

    pub(crate) fn cost_from_slots(&self, slots: &[f64]) -> Result<f64, SystemError> {
        Self::eval(&self.cost, slots)
    }

    /// Velocity `ρ(t, x, u)` and cost rate `L(t, x, u)`.
    pub fn dynamics_at(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64), SystemError> {
        let s = self.slots(t, x.as_slice(), u.as_slice())?;
        let mut v = DVector::zeros(self.state_dim());
        self.velocity_from_slots(&s, v.as_mut_slice())?;
        Ok((v, self.cost_from_slots(&s)?))
    }

    pub(crate) fn jacobians_from_slots(&self, s: &[f64]) -> Result<Jacobians, SystemError> {
        let d = self.state_dim();
        let k = self.control_dim();
        let mut a = DMatrix::zeros(d, d);
        let mut b = DMatrix::zeros(d, k);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = Self::eval(&self.rho_x[i][j], s)?;
            }
            for c in 0..k {
                b[(i, c)] = Self::eval(&self.rho_u[i][c], s)?;
            }
        }
        let lx = DVector::from_iterator(
            d,
            self.cost_x
                .iter()
                .map(|e| Self::eval(e, s))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let lu = DVector::from_iterator(
            k,
            self.cost_u
                .iter()
                .map(|e| Self::eval(e, s))
                .collect::<Result<Vec<_>, _>>()?,
        );
        Ok(Jacobians { a, b, lx, lu })
    }

    /// `∂ρ/∂x`, `∂ρ/∂u`, `∂L/∂x`, `∂L/∂u` at `(t, x, u)`.
    pub fn jacobians_at(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<Jacobians, SystemError> {
        let s = self.slots(t, x.as_slice(), u.as_slice())?;
        self.jacobians_from_slots(&s)
    }

    /// Only `∂ρ/∂x` and `∂L/∂x`, the pieces the transport equations need.
    pub(crate) fn state_jacobian_from_slots(
        &self,
        s: &[f64],
        a: &mut DMatrix<f64>,
        lx: &mut DVector<f64>,
    ) -> Result<(), SystemError> {
        let d = self.state_dim();
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = Self::eval(&self.rho_x[i][j], s)?;
            }
            lx[i] = Self::eval(&self.cost_x[i], s)?;
        }
        Ok(())
    }

    /// Hessian in `u` of `h = ηᵀρ + λL`.
    pub fn hamiltonian_hessian_uu(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        eta: &DVector<f64>,
        lambda: f64,
    ) -> Result<DMatrix<f64>, SystemError> {
        let s = self.slots(t, x.as_slice(), u.as_slice())?;
        let k = self.control_dim();
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let mut v = lambda * Self::eval(&self.cost_uu[a][b], &s)?;
                for (i, rho) in self.rho_uu.iter().enumerate() {
                    v += eta[i] * Self::eval(&rho[a][b], &s)?;
                }
                h[(a, b)] = v;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::catalog;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn catalog_problems_validate_cleanly() {
        for entry in crate::system::catalog_entries() {
            assert!(validate(&(entry.build)()).is_empty(), "{}", entry.name);
        }
    }

    #[test]
    fn degenerate_box_is_diagnosed() {
        let mut def = catalog("lqr1d").unwrap().def().clone();
        def.fiber = Fiber::Box {
            lo: vec![1.0],
            hi: vec![1.0],
        };
        let diags = validate(&def);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].to_string().contains("degenerate fiber bound"));
    }

    #[test]
    fn unknown_control_is_diagnosed() {
        let mut def = catalog("heisenberg").unwrap().def().clone();
        def.dynamics[2] = "u3 * x1".into();
        let diags = validate(&def);
        assert_eq!(diags.len(), 1);
        assert!(
            diags[0].to_string().contains("unknown variable"),
            "{}",
            diags[0]
        );
        assert!(matches!(
            ControlProblem::new(def),
            Err(SystemError::Invalid(_))
        ));
    }

    #[test]
    fn other_invariants_are_diagnosed() {
        let mut def = catalog("lqr1d").unwrap().def().clone();
        def.horizon = [1.0, 1.0];
        def.dynamics.push("u1".into());
        def.x_b = Some(vec![1.0, 2.0]);
        def.fiber = Fiber::Grid { points: vec![] };
        assert_eq!(validate(&def).len(), 4);
    }

    #[test]
    fn dynamics_substitution() {
        let lqr = catalog("lqr1d").unwrap();
        let (vel, l) = lqr.dynamics_at(0.0, &v(&[0.0]), &v(&[1.0])).unwrap();
        assert_eq!((vel[0], l), (1.0, 0.5));

        let m = catalog("martinet").unwrap();
        let (vel, l) = m
            .dynamics_at(0.0, &v(&[0.3, 0.0, 0.0]), &v(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(vel, v(&[1.0, 0.0, 0.0]));
        assert_eq!(l, 0.5);

        let h = catalog("heisenberg").unwrap();
        let (vel, l) = h
            .dynamics_at(0.0, &v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0]))
            .unwrap();
        assert_eq!(vel, v(&[0.0, 1.0, 0.5]));
        assert_eq!(l, 0.5);
    }

    #[test]
    fn third_component_vanishes_where_expected() {
        let m = catalog("martinet").unwrap();
        let h = catalog("heisenberg").unwrap();
        for u in [[1.0, 0.0], [-2.0, 3.0], [0.3, 0.7]] {
            let (vel, _) = m.dynamics_at(0.0, &v(&[0.4, 0.0, 2.0]), &v(&u)).unwrap();
            assert_eq!(vel[2], 0.0);
            let (vel, _) = h.dynamics_at(0.0, &v(&[0.0, 0.0, 0.0]), &v(&u)).unwrap();
            assert_eq!(vel[2], 0.0);
        }
    }

    #[test]
    fn jacobians_by_hand() {
        let lqr = catalog("lqr1d").unwrap();
        let j = lqr.jacobians_at(0.0, &v(&[0.2]), &v(&[1.5])).unwrap();
        assert_eq!(j.a[(0, 0)], 0.0);
        assert_eq!(j.b[(0, 0)], 1.0);
        assert_eq!(j.lu[0], 1.5);

        // ∂ρ³/∂x2 = x2·u1 is the only candidate entry for martinet.
        let m = catalog("martinet").unwrap();
        let j = m
            .jacobians_at(0.0, &v(&[0.3, 0.0, 0.0]), &v(&[1.0, 0.5]))
            .unwrap();
        assert_eq!(j.a, DMatrix::zeros(3, 3));
        let j = m
            .jacobians_at(0.0, &v(&[0.3, 2.0, 0.0]), &v(&[1.5, 0.5]))
            .unwrap();
        assert_eq!(j.a[(2, 1)], 3.0);

        let h = catalog("heisenberg").unwrap();
        let j = h
            .jacobians_at(0.0, &v(&[0.0, 0.0, 0.0]), &v(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(
            j.a.row(2).iter().copied().collect::<Vec<_>>(),
            vec![0.0, -0.5, 0.0]
        );
    }

    #[test]
    fn box_fiber_tolerates_rounding_only() {
        let f = Fiber::Box {
            lo: vec![-0.5],
            hi: vec![0.5],
        };
        assert!(f.contains(&[0.5 + 1e-14]));
        assert!(!f.contains(&[0.5 + 1e-9]));
        let g = Fiber::Grid {
            points: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        assert!(g.contains(&[1.0, 0.0]));
        assert!(!g.contains(&[0.5, 0.5]));
    }

    #[test]
    fn fiber_violation_is_an_error() {
        let mut def = catalog("lqr1d").unwrap().def().clone();
        def.fiber = Fiber::Box {
            lo: vec![-0.5],
            hi: vec![0.5],
        };
        let p = ControlProblem::new(def).unwrap();
        assert!(matches!(
            p.dynamics_at(0.0, &v(&[0.0]), &v(&[1.0])),
            Err(SystemError::FiberViolation { .. })
        ));
    }
}
