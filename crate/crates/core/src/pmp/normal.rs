use nalgebra::{DMatrix, DVector};

use super::{Multiplier, PmpError};
use crate::flow::{FlowConfig, FlowError, StageControls, Trajectory};
use crate::system::{ControlProblem, Fiber};

const NEWTON_ITERATIONS: usize = 50;

/// Maximizer of `h(t, x, ·, p, λ)` over the fiber, warm-started at `start`.
fn maximizer(
    problem: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    p: &DVector<f64>,
    lambda: f64,
    start: &DVector<f64>,
) -> Result<DVector<f64>, PmpError> {
    let (lo, hi) = match problem.fiber() {
        Fiber::Grid { points } => {
            let mut best: Option<(f64, DVector<f64>)> = None;
            for pt in points {
                let u = DVector::from_column_slice(pt);
                let (rho, l) = problem.dynamics_at(t, x, &u)?;
                let h = p.dot(&rho) + lambda * l;
                if best.as_ref().is_none_or(|(bh, _)| h > *bh) {
                    best = Some((h, u));
                }
            }
            return Ok(best.expect("validated grids are nonempty").1);
        }
        Fiber::Box { lo, hi } => (Some(lo.as_slice()), Some(hi.as_slice())),
        Fiber::Unconstrained => (None, None),
    };
    let k = problem.control_dim();
    let clip = |u: &mut DVector<f64>| {
        if let (Some(lo), Some(hi)) = (lo, hi) {
            for a in 0..k {
                u[a] = u[a].clamp(lo[a], hi[a]);
            }
        }
    };
    let mut u = start.clone();
    clip(&mut u);
    for _ in 0..NEWTON_ITERATIONS {
        let jac = problem.jacobians_at(t, x, &u)?;
        let grad = jac.b.tr_mul(p) + &jac.lu * lambda;
        let free: Vec<usize> = (0..k)
            .filter(|&a| match (lo, hi) {
                (Some(lo), Some(hi)) => {
                    !((u[a] <= lo[a] && grad[a] <= 0.0) || (u[a] >= hi[a] && grad[a] >= 0.0))
                }
                _ => true,
            })
            .collect();
        let hess = problem.hamiltonian_hessian_uu(t, x, &u, p, lambda)?;
        let m = free.len();
        let neg = DMatrix::from_fn(m, m, |i, j| -hess[(free[i], free[j])]);
        let Some(chol) = neg.cholesky() else {
            return Err(PmpError::Indefinite { t });
        };
        if m == 0 {
            return Ok(u);
        }
        let g = DVector::from_fn(m, |i, _| grad[free[i]]);
        // (−H) Δ = g  ⇔  H Δ = −g
        let step = chol.solve(&g);
        for (i, &a) in free.iter().enumerate() {
            u[a] += step[i];
        }
        clip(&mut u);
        if step.amax() <= 1e-14 * (1.0 + u.amax()) {
            return Ok(u);
        }
    }
    Err(PmpError::NewtonFailed { t })
}

struct Rates {
    x: DVector<f64>,
    p: DVector<f64>,
    l: f64,
}

fn rates(
    problem: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    p: &DVector<f64>,
    u: &DVector<f64>,
    lambda: f64,
) -> Result<Rates, PmpError> {
    let (rho, l) = problem.dynamics_at(t, x, u)?;
    let jac = problem.jacobians_at(t, x, u)?;
    Ok(Rates {
        x: rho,
        p: -(jac.a.tr_mul(p)) - jac.lx * lambda,
        l,
    })
}

fn rk4_sum(y: &DVector<f64>, h: f64, k: [&DVector<f64>; 4]) -> DVector<f64> {
    let w = h / 6.0;
    DVector::from_iterator(
        y.len(),
        (0..y.len()).map(|i| y[i] + w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])),
    )
}

/// Integrate `ẋ = ∂h/∂p`, `ṗ = −∂h/∂x` with `u` maximizing `h` at every
/// RK4 stage. Returns the trajectory (with its cost) and the multiplier
/// `(p(t), λ)`.
pub fn integrate_normal_hamiltonian(
    problem: &ControlProblem,
    x0: &DVector<f64>,
    p0: &DVector<f64>,
    lambda: f64,
    config: FlowConfig,
) -> Result<(Trajectory, Multiplier), PmpError> {
    if lambda.is_nan() || lambda >= 0.0 {
        return Err(PmpError::LambdaSign(lambda));
    }
    let d = problem.state_dim();
    for v in [x0, p0] {
        if v.len() != d {
            return Err(PmpError::Dimension {
                expected: d,
                found: v.len(),
            });
        }
    }
    let (a, b) = problem.horizon();
    let steps = config.steps.max(1);
    let h = (b - a) / steps as f64;
    let half = 0.5 * h;
    let mut u = maximizer(
        problem,
        a,
        x0,
        p0,
        lambda,
        &DVector::zeros(problem.control_dim()),
    )?;
    let mut traj = Trajectory {
        times: vec![a],
        states: vec![x0.clone()],
        controls: vec![u.clone()],
        cost: vec![0.0],
        breakpoints: Vec::new(),
        stage_controls: Vec::with_capacity(steps),
        law: None,
    };
    let mut eta = vec![p0.clone()];
    for s in 0..steps {
        let t = a + s as f64 * h;
        let t_next = if s + 1 == steps {
            b
        } else {
            a + (s + 1) as f64 * h
        };
        let h = t_next - t;
        let x = traj.states.last().unwrap().clone();
        let p = eta.last().unwrap().clone();
        let u1 = maximizer(problem, t, &x, &p, lambda, &u)?;
        let r1 = rates(problem, t, &x, &p, &u1, lambda)?;
        let x2 = &x + &r1.x * half;
        let p2 = &p + &r1.p * half;
        let u2 = maximizer(problem, t + half, &x2, &p2, lambda, &u1)?;
        let r2 = rates(problem, t + half, &x2, &p2, &u2, lambda)?;
        let x3 = &x + &r2.x * half;
        let p3 = &p + &r2.p * half;
        let u3 = maximizer(problem, t + half, &x3, &p3, lambda, &u2)?;
        let r3 = rates(problem, t + half, &x3, &p3, &u3, lambda)?;
        let x4 = &x + &r3.x * h;
        let p4 = &p + &r3.p * h;
        let u4 = maximizer(problem, t_next, &x4, &p4, lambda, &u3)?;
        let r4 = rates(problem, t_next, &x4, &p4, &u4, lambda)?;

        let xn = rk4_sum(&x, h, [&r1.x, &r2.x, &r3.x, &r4.x]);
        let pn = rk4_sum(&p, h, [&r1.p, &r2.p, &r3.p, &r4.p]);
        let j = *traj.cost.last().unwrap();
        let jn = j + h / 6.0 * (r1.l + 2.0 * r2.l + 2.0 * r3.l + r4.l);
        if !xn.iter().chain(pn.iter()).all(|v| v.is_finite()) || !jn.is_finite() {
            return Err(FlowError::BlowUp { t: t_next }.into());
        }
        u = maximizer(problem, t_next, &xn, &pn, lambda, &u4)?;
        let stage: StageControls = [u1, u2, u3, u4];
        traj.stage_controls.push(stage);
        traj.times.push(t_next);
        traj.states.push(xn);
        traj.controls.push(u.clone());
        traj.cost.push(jn);
        eta.push(pn);
    }
    Ok((traj, Multiplier { lambda, eta }))
}
