use nalgebra::{DMatrix, DVector};

use super::integrate::{replay, stages};
use super::{FlowError, Trajectory};
use crate::system::ControlProblem;

/// Linear map carrying tangent vectors at `t0` to `t1` along a trajectory.
///
/// With `extended` set the matrix acts on `(δx, δJ)` and has the block form
/// `[[M, 0], [r, 1]]`, where `r` accumulates the first-order cost change.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportOperator {
    pub t0: f64,
    pub t1: f64,
    pub matrix: DMatrix<f64>,
    pub extended: bool,
}

impl TransportOperator {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// Cotangent action `ηᵀT`, returned as a column.
    pub fn pull_back(&self, eta: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(eta)
    }

    /// `later ∘ self`; `later` must start where `self` ends.
    pub fn then(&self, later: &TransportOperator) -> TransportOperator {
        TransportOperator {
            t0: self.t0,
            t1: later.t1,
            matrix: &later.matrix * &self.matrix,
            extended: self.extended,
        }
    }
}

/// Covector `η(t)` at every node of a trajectory, with its constant `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorPath {
    pub times: Vec<f64>,
    pub eta: Vec<DVector<f64>>,
    pub lambda: f64,
}

impl CovectorPath {
    pub fn at_end(&self) -> &DVector<f64> {
        self.eta.last().expect("path has at least one node")
    }

    pub fn at_start(&self) -> &DVector<f64> {
        &self.eta[0]
    }
}

/// Discrete propagator of step `s`: RK4 applied to `Ṁ = A M` from `M = I`,
/// with `A` evaluated at the RK4 stage states of the stored step.
pub(crate) fn step_propagator(
    problem: &ControlProblem,
    traj: &Trajectory,
    s: usize,
    extended: bool,
) -> Result<DMatrix<f64>, FlowError> {
    let d = problem.state_dim();
    let n = if extended { d + 1 } else { d };
    let t = traj.times[s];
    let h = traj.times[s + 1] - t;
    let u = &traj.stage_controls[s];
    let st = stages(problem, t, h, &traj.states[s], u)?;
    let mut a = DMatrix::zeros(d, d);
    let mut lx = DVector::zeros(d);
    let mut mats = Vec::with_capacity(4);
    for i in 0..4 {
        let slots = problem.slots(st.ts[i], st.xs[i].as_slice(), u[i].as_slice())?;
        problem.state_jacobian_from_slots(&slots, &mut a, &mut lx)?;
        let mut big = DMatrix::zeros(n, n);
        big.view_mut((0, 0), (d, d)).copy_from(&a);
        if extended {
            for j in 0..d {
                big[(d, j)] = lx[j];
            }
        }
        mats.push(big);
    }
    let id = DMatrix::<f64>::identity(n, n);
    let k1 = mats[0].clone();
    let k2 = &mats[1] * (&id + &k1 * (0.5 * h));
    let k3 = &mats[2] * (&id + &k2 * (0.5 * h));
    let k4 = &mats[3] * (&id + &k3 * h);
    let phi = id + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(FlowError::NonFinite { t: t + h });
    }
    Ok(phi)
}

fn span(traj: &Trajectory, t0: f64, t1: f64) -> Result<(usize, usize), FlowError> {
    if t0 > t1 {
        return Err(FlowError::TimeOrder { t0, t1 });
    }
    Ok((traj.node_index(t0)?, traj.node_index(t1)?))
}

fn path(
    problem: &ControlProblem,
    traj: &Trajectory,
    i0: usize,
    i1: usize,
    extended: bool,
) -> Result<Vec<DMatrix<f64>>, FlowError> {
    let n = problem.state_dim() + extended as usize;
    let mut out = Vec::with_capacity(i1 - i0 + 1);
    out.push(DMatrix::identity(n, n));
    for s in i0..i1 {
        let next = step_propagator(problem, traj, s, extended)? * out.last().unwrap();
        out.push(next);
    }
    Ok(out)
}

fn operator(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    extended: bool,
) -> Result<TransportOperator, FlowError> {
    let (i0, i1) = span(traj, t0, t1)?;
    let matrix = path(problem, traj, i0, i1, extended)?.pop().unwrap();
    Ok(TransportOperator {
        t0: traj.times[i0],
        t1: traj.times[i1],
        matrix,
        extended,
    })
}

/// Transport of tangent vectors from node `t0` to node `t1 ≥ t0`.
pub fn transport(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
) -> Result<TransportOperator, FlowError> {
    operator(problem, traj, t0, t1, false)
}

/// `T(t0 → t_j)` for every node `t_j` in `[t0, t1]`, starting with the identity.
pub fn transport_path(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
) -> Result<Vec<DMatrix<f64>>, FlowError> {
    let (i0, i1) = span(traj, t0, t1)?;
    path(problem, traj, i0, i1, false)
}

/// Transport on the cost-extended tangent space `ℝ^{d+1}`.
pub fn extended_transport(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
) -> Result<TransportOperator, FlowError> {
    operator(problem, traj, t0, t1, true)
}

/// `T(t_j → b)` for every node, built backwards from the end.
pub(crate) fn transports_to_end(
    problem: &ControlProblem,
    traj: &Trajectory,
    extended: bool,
) -> Result<Vec<DMatrix<f64>>, FlowError> {
    let n = problem.state_dim() + extended as usize;
    let steps = traj.steps();
    let mut out = vec![DMatrix::identity(n, n); steps + 1];
    for s in (0..steps).rev() {
        out[s] = &out[s + 1] * step_propagator(problem, traj, s, extended)?;
    }
    Ok(out)
}

/// Solve `η̇ = −Aᵀη − λ∂L/∂x` backwards from `η(b) = eta_b`.
///
/// This is the exact adjoint of the discrete transport, so
/// `⟨η(t), T(a → t)v⟩` is constant along the grid up to rounding.
pub fn adjoint_transport(
    problem: &ControlProblem,
    traj: &Trajectory,
    eta_b: &DVector<f64>,
    lambda: f64,
) -> Result<CovectorPath, FlowError> {
    let d = problem.state_dim();
    if eta_b.len() != d {
        return Err(FlowError::Dimension {
            expected: d,
            found: eta_b.len(),
        });
    }
    let steps = traj.steps();
    let mut psi = DVector::zeros(d + 1);
    psi.rows_mut(0, d).copy_from(eta_b);
    psi[d] = lambda;
    let mut eta = vec![DVector::zeros(d); steps + 1];
    eta[steps] = eta_b.clone();
    for s in (0..steps).rev() {
        psi = step_propagator(problem, traj, s, true)?.tr_mul(&psi);
        // The last column of the propagator is exactly e_{d+1}.
        psi[d] = lambda;
        eta[s] = psi.rows(0, d).into_owned();
    }
    Ok(CovectorPath {
        times: traj.times.clone(),
        eta,
        lambda,
    })
}

/// Endpoint at node `t1` of the discrete flow started from `x` at node `t0`,
/// re-using the stored controls. Returns the state and the cost gained.
pub fn fd_flow_oracle(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, f64), FlowError> {
    let (i0, i1) = span(traj, t0, t1)?;
    replay(problem, traj, i0, i1, x, 0.0)
}

fn fd_columns(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    eps: f64,
    extended: bool,
) -> Result<DMatrix<f64>, FlowError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FlowError::BadStep(eps));
    }
    let (i0, i1) = span(traj, t0, t1)?;
    let d = problem.state_dim();
    let n = d + extended as usize;
    let base = &traj.states[i0];
    let mut m = DMatrix::zeros(n, n);
    for c in 0..d {
        let mut plus = base.clone();
        plus[c] += eps;
        let mut minus = base.clone();
        minus[c] -= eps;
        let (xp, jp) = replay(problem, traj, i0, i1, &plus, 0.0)?;
        let (xm, jm) = replay(problem, traj, i0, i1, &minus, 0.0)?;
        for r in 0..d {
            m[(r, c)] = (xp[r] - xm[r]) / (2.0 * eps);
        }
        if extended {
            m[(d, c)] = (jp - jm) / (2.0 * eps);
        }
    }
    if extended {
        m[(d, d)] = 1.0;
    }
    Ok(m)
}

/// Central finite-difference estimate of the transport matrix.
pub fn fd_transport_oracle(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    eps: f64,
) -> Result<DMatrix<f64>, FlowError> {
    fd_columns(problem, traj, t0, t1, eps, false)
}

/// Central finite-difference estimate of the extended transport matrix.
pub fn fd_extended_transport_oracle(
    problem: &ControlProblem,
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    eps: f64,
) -> Result<DMatrix<f64>, FlowError> {
    fd_columns(problem, traj, t0, t1, eps, true)
}
