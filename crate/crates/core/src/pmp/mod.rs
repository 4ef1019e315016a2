//! Maximum Principle layer: Hamiltonians, multipliers and classification.
//!
//! Sign conventions: `h = ⟨η, ρ⟩ + λL` is maximized over the fiber and
//! multipliers of minimizing controls have `λ ≤ 0`. The extended cone lives
//! in `ℝ^{d+1}` with the cost as its last coordinate.

mod check;
mod classify;
mod normal;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::cone::ConeError;
use crate::flow::{adjoint_transport, FlowError, Trajectory};
use crate::sampling::SamplingError;
use crate::system::{ControlProblem, SystemError};
use crate::variation::VariationError;

pub use check::{check_multiplier, CheckConfig, MultiplierCheck};
pub use classify::{
    classify_cone, classify_extremal, ClassificationFlags, ExtremalReport, ReportDiagnostics,
    Witness,
};
pub use normal::integrate_normal_hamiltonian;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmpError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("sampling produced an empty cone; the fiber admits no variation")]
    EmptyCone,
    #[error("extended dimension {0} exceeds the dual ray limit")]
    TooLarge(usize),
    #[error("normal extremals need lambda < 0, got {0}")]
    LambdaSign(f64),
    #[error("covector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("(eta_b, lambda) must not vanish")]
    ZeroMultiplier,
    #[error("Newton iteration for the maximizing control did not converge at t = {t}")]
    NewtonFailed { t: f64 },
    #[error("Hessian of h in u is not negative definite at t = {t}")]
    Indefinite { t: f64 },
    #[error("finite-grid fibers are not supported here")]
    UnsupportedFiber,
}

/// Tolerances for multiplier checks and cone decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub stationarity: f64,
    pub adjoint: f64,
    /// Relative: the margin must satisfy `h(u′) − h(u) ≤ tol·(1 + |h(u)|)`.
    pub maximization: f64,
    pub cone: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stationarity: 1e-5,
            adjoint: 1e-5,
            maximization: 1e-6,
            cone: 1e-9,
        }
    }
}

/// Covector path `η(t_j)` on a trajectory grid together with `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    pub lambda: f64,
    pub eta: Vec<DVector<f64>>,
}

/// `h = Σ η_i ρ^i(t, x, u) + λ L(t, x, u)`.
pub fn hamiltonian(
    problem: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    eta: &DVector<f64>,
    lambda: f64,
) -> Result<f64, PmpError> {
    if eta.len() != problem.state_dim() {
        return Err(PmpError::Dimension {
            expected: problem.state_dim(),
            found: eta.len(),
        });
    }
    let (rho, l) = problem.dynamics_at(t, x, u)?;
    Ok(eta.dot(&rho) + lambda * l)
}

/// Multiplier whose endpoint value is `(η_b, λ)`, by adjoint transport.
pub fn recover_multiplier(
    problem: &ControlProblem,
    traj: &Trajectory,
    eta_b: &DVector<f64>,
    lambda: f64,
) -> Result<Multiplier, PmpError> {
    if eta_b.amax() == 0.0 && lambda == 0.0 {
        return Err(PmpError::ZeroMultiplier);
    }
    let path = adjoint_transport(problem, traj, eta_b, lambda)?;
    Ok(Multiplier {
        lambda: path.lambda,
        eta: path.eta,
    })
}
