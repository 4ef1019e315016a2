use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Multiplier, PmpError, Tolerances};
use crate::flow::Trajectory;
use crate::sampling::{AutoSampler, FiberSampler};
use crate::system::{ControlProblem, Fiber, Jacobians};

/// Settings for [`check_multiplier`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckConfig {
    /// Random alternatives per node for the maximization test, on top of a
    /// deterministic grid.
    pub fiber_samples: usize,
    pub seed: u64,
    pub tol: Tolerances,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            fiber_samples: 64,
            seed: 0,
            tol: Tolerances::default(),
        }
    }
}

/// Residuals of the three multiplier conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierCheck {
    /// `max ‖η̇ + Aᵀη + λ L_x‖∞` at interior nodes of smooth pieces.
    pub adjoint: f64,
    /// `max ‖Bᵀη + λ L_u‖∞` over components free to move.
    pub stationarity: f64,
    /// `max (h(u′) − h(u)) / (1 + |h(u)|)` over the probed `u′`.
    pub maximization: f64,
    pub nonvanishing: bool,
    /// `max |h(t_j) − h(a)|` along the trajectory.
    pub hamiltonian_drift: f64,
    pub passed: bool,
}

/// Half-width of the fixed grid probed on unconstrained fibers.
pub(crate) const SEARCH_HALF_WIDTH: f64 = 5.0;

pub(crate) fn search_region(fiber: &Fiber) -> String {
    match fiber {
        Fiber::Unconstrained => format!(
            "grid on [-{w}, {w}]^k plus Gaussian shells around u(t); global maximality beyond this region is not certified",
            w = SEARCH_HALF_WIDTH
        ),
        Fiber::Box { .. } => "grid and Latin hypercube over the box".into(),
        Fiber::Grid { .. } => "all grid points".into(),
    }
}

fn probe_grid(fiber: &Fiber, k: usize) -> Vec<DVector<f64>> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = match fiber {
        Fiber::Box { lo, hi } => (lo.clone(), hi.clone()),
        Fiber::Unconstrained => (vec![-SEARCH_HALF_WIDTH; k], vec![SEARCH_HALF_WIDTH; k]),
        Fiber::Grid { points } => {
            return points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect()
        }
    };
    let levels = (200f64.powf(1.0 / k as f64).floor() as usize).clamp(3, 201);
    let levels = if levels.is_multiple_of(2) {
        levels + 1
    } else {
        levels
    };
    let total = levels.pow(k as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(k, |a, _| {
                let i = idx % levels;
                idx /= levels;
                lo[a] + (hi[a] - lo[a]) * i as f64 / (levels - 1) as f64
            })
        })
        .collect()
}

/// Per-node data shared by every multiplier checked on one trajectory.
pub(crate) struct Probes {
    jac: Vec<Jacobians>,
    base: Vec<(DVector<f64>, f64)>,
    deltas: Vec<Vec<(DVector<f64>, f64)>>,
}

impl Probes {
    pub(crate) fn new(
        problem: &ControlProblem,
        traj: &Trajectory,
        fiber_samples: usize,
        seed: u64,
    ) -> Result<Self, PmpError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = probe_grid(problem.fiber(), problem.control_dim());
        let mut jac = Vec::with_capacity(traj.len());
        let mut base = Vec::with_capacity(traj.len());
        let mut deltas = Vec::with_capacity(traj.len());
        for j in 0..traj.len() {
            let (t, x, u) = (traj.times()[j], &traj.states()[j], &traj.controls()[j]);
            jac.push(problem.jacobians_at(t, x, u)?);
            let (rho, l) = problem.dynamics_at(t, x, u)?;
            let mut alts = if fiber_samples > 0 {
                AutoSampler.sample(problem.fiber(), u, fiber_samples, &mut rng)
            } else {
                Vec::new()
            };
            if !matches!(problem.fiber(), Fiber::Grid { .. }) {
                alts.extend(grid.iter().cloned());
            }
            let mut node = Vec::with_capacity(alts.len());
            for alt in &alts {
                let (r, la) = problem.dynamics_at(t, x, alt)?;
                node.push((r - &rho, la - l));
            }
            base.push((rho, l));
            deltas.push(node);
        }
        Ok(Self { jac, base, deltas })
    }
}

/// Indices of control components that can move both ways at `u`.
fn free_components(fiber: &Fiber, u: &DVector<f64>) -> Vec<usize> {
    match fiber {
        Fiber::Unconstrained => (0..u.len()).collect(),
        Fiber::Box { lo, hi } => (0..u.len())
            .filter(|&a| {
                let slack = 1e-9 * (hi[a] - lo[a]);
                u[a] > lo[a] + slack && u[a] < hi[a] - slack
            })
            .collect(),
        Fiber::Grid { .. } => Vec::new(),
    }
}

pub(crate) fn check_with(
    problem: &ControlProblem,
    traj: &Trajectory,
    mult: &Multiplier,
    probes: &Probes,
    tol: &Tolerances,
) -> Result<MultiplierCheck, PmpError> {
    let d = problem.state_dim();
    if mult.eta.len() != traj.len() {
        return Err(PmpError::Dimension {
            expected: traj.len(),
            found: mult.eta.len(),
        });
    }
    if let Some(bad) = mult.eta.iter().find(|e| e.len() != d) {
        return Err(PmpError::Dimension {
            expected: d,
            found: bad.len(),
        });
    }
    let lambda = mult.lambda;
    let eta = &mult.eta;
    let times = traj.times();

    let mut adjoint: f64 = 0.0;
    for (s, e) in traj.smooth_pieces() {
        if e < s + 4 {
            continue;
        }
        for j in s + 2..=e - 2 {
            let h = (times[j + 2] - times[j - 2]) / 4.0;
            let deriv =
                (&eta[j - 2] - &eta[j - 1] * 8.0 + &eta[j + 1] * 8.0 - &eta[j + 2]) / (12.0 * h);
            let jac = &probes.jac[j];
            let r = deriv + jac.a.tr_mul(&eta[j]) + &jac.lx * lambda;
            adjoint = adjoint.max(r.amax());
        }
    }

    let mut stationarity: f64 = 0.0;
    let mut maximization = f64::NEG_INFINITY;
    let mut nonvanishing = true;
    let mut h0 = None;
    let mut drift: f64 = 0.0;
    for j in 0..traj.len() {
        let jac = &probes.jac[j];
        let grad = jac.b.tr_mul(&eta[j]) + &jac.lu * lambda;
        for a in free_components(problem.fiber(), &traj.controls()[j]) {
            stationarity = stationarity.max(grad[a].abs());
        }
        let (rho, l) = &probes.base[j];
        let h = eta[j].dot(rho) + lambda * l;
        let start = *h0.get_or_insert(h);
        drift = drift.max((h - start).abs());
        for (dr, dl) in &probes.deltas[j] {
            let margin = eta[j].dot(dr) + lambda * dl;
            maximization = maximization.max(margin / (1.0 + h.abs()));
        }
        if eta[j].amax().max(lambda.abs()) <= 1e-12 {
            nonvanishing = false;
        }
    }
    if maximization == f64::NEG_INFINITY {
        maximization = 0.0;
    }
    let passed = adjoint <= tol.adjoint
        && stationarity <= tol.stationarity
        && maximization <= tol.maximization
        && nonvanishing
        && lambda <= 0.0;
    Ok(MultiplierCheck {
        adjoint,
        stationarity,
        maximization,
        nonvanishing,
        hamiltonian_drift: drift,
        passed,
    })
}

/// Check the adjoint equation, stationarity in `u`, maximization of `h`
/// over probed controls, and nonvanishing of `(η, λ)`.
pub fn check_multiplier(
    problem: &ControlProblem,
    traj: &Trajectory,
    mult: &Multiplier,
    cfg: &CheckConfig,
) -> Result<MultiplierCheck, PmpError> {
    let probes = Probes::new(problem, traj, cfg.fiber_samples, cfg.seed)?;
    check_with(problem, traj, mult, &probes, &cfg.tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, FlowConfig};
    use crate::pmp::recover_multiplier;
    use crate::system::{catalog, PiecewiseControl};

    fn lqr() -> (ControlProblem, Trajectory) {
        let p = catalog("lqr1d").unwrap();
        let c = PiecewiseControl::constant(&p, &[1.0]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(1), FlowConfig::with_steps(100)).unwrap();
        (p, tr)
    }

    fn constant(tr: &Trajectory, eta: f64, lambda: f64) -> Multiplier {
        Multiplier {
            lambda,
            eta: vec![DVector::from_element(1, eta); tr.len()],
        }
    }

    #[test]
    fn lqr_multiplier_passes() {
        let (p, tr) = lqr();
        let r =
            check_multiplier(&p, &tr, &constant(&tr, 1.0, -1.0), &CheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.stationarity, 0.0);
        assert_eq!(r.adjoint, 0.0);
        assert!(r.maximization <= 0.0);
    }

    #[test]
    fn wrong_scale_fails_stationarity() {
        let (p, tr) = lqr();
        let r =
            check_multiplier(&p, &tr, &constant(&tr, 2.0, -1.0), &CheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.stationarity, 1.0);
        assert!(r.maximization > 0.0);
    }

    #[test]
    fn zero_multiplier_fails() {
        let (p, tr) = lqr();
        let r =
            check_multiplier(&p, &tr, &constant(&tr, 0.0, 0.0), &CheckConfig::default()).unwrap();
        assert!(!r.nonvanishing && !r.passed);
    }

    #[test]
    fn wrong_adjoint_is_detected() {
        let p = catalog("heisenberg").unwrap();
        let c = PiecewiseControl::formulas(&p, &["cos(t)", "sin(t)"]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(3), FlowConfig::with_steps(200)).unwrap();
        let good = recover_multiplier(&p, &tr, &DVector::from_column_slice(&[0.0, 0.0, 1.0]), 0.0)
            .unwrap();
        let cfg = CheckConfig::default();
        let r = check_multiplier(&p, &tr, &good, &cfg).unwrap();
        assert!(r.adjoint < 1e-9, "{r:?}");
        let mut bad = good.clone();
        for (j, e) in bad.eta.iter_mut().enumerate() {
            e[0] += 0.01 * tr.times()[j];
        }
        let r = check_multiplier(&p, &tr, &bad, &cfg).unwrap();
        assert!(r.adjoint > 1e-3);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (p, tr) = lqr();
        let m = Multiplier {
            lambda: -1.0,
            eta: vec![DVector::zeros(1); 3],
        };
        assert!(matches!(
            check_multiplier(&p, &tr, &m, &CheckConfig::default()),
            Err(PmpError::Dimension { .. })
        ));
    }
}
