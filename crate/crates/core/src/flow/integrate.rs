use nalgebra::DVector;

use super::{FlowConfig, FlowError, StageControls, Trajectory};
use crate::system::{CompositeFlowSchedule, ControlProblem, PiecewiseControl};

/// Stage times, states and rates of one RK4 step of the `(x, J)` system.
pub(crate) struct Stages {
    pub ts: [f64; 4],
    pub xs: [DVector<f64>; 4],
    pub ks: [DVector<f64>; 4],
    pub ls: [f64; 4],
}

fn rate(
    problem: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, f64), FlowError> {
    let s = problem.slots(t, x.as_slice(), u.as_slice())?;
    let mut k = DVector::zeros(x.len());
    problem.velocity_from_slots(&s, k.as_mut_slice())?;
    Ok((k, problem.cost_from_slots(&s)?))
}

pub(crate) fn stages(
    problem: &ControlProblem,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    u: &StageControls,
) -> Result<Stages, FlowError> {
    let half = 0.5 * h;
    let ts = [t, t + half, t + half, t + h];
    let x1 = x.clone();
    let (k1, l1) = rate(problem, ts[0], &x1, &u[0])?;
    let x2 = x + &k1 * half;
    let (k2, l2) = rate(problem, ts[1], &x2, &u[1])?;
    let x3 = x + &k2 * half;
    let (k3, l3) = rate(problem, ts[2], &x3, &u[2])?;
    let x4 = x + &k3 * h;
    let (k4, l4) = rate(problem, ts[3], &x4, &u[3])?;
    Ok(Stages {
        ts,
        xs: [x1, x2, x3, x4],
        ks: [k1, k2, k3, k4],
        ls: [l1, l2, l3, l4],
    })
}

pub(crate) fn combine(x: &DVector<f64>, j: f64, h: f64, st: &Stages) -> (DVector<f64>, f64) {
    let w = h / 6.0;
    let [k1, k2, k3, k4] = &st.ks;
    let next = DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| x[i] + w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])),
    );
    let [l1, l2, l3, l4] = st.ls;
    (next, j + w * (l1 + 2.0 * l2 + 2.0 * l3 + l4))
}

/// One RK4 step of the state and accumulated cost.
pub(crate) fn rk4_step(
    problem: &ControlProblem,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    j: f64,
    u: &StageControls,
) -> Result<(DVector<f64>, f64), FlowError> {
    let st = stages(problem, t, h, x, u)?;
    let (next, jn) = combine(x, j, h, &st);
    if !next.iter().all(|v| v.is_finite()) || !jn.is_finite() {
        return Err(FlowError::BlowUp { t: t + h });
    }
    Ok((next, jn))
}

fn steps_for(duration: f64, base: f64) -> usize {
    ((duration / base) - 1e-9).ceil().max(1.0) as usize
}

/// Builds a trajectory leg by leg. Each leg is a smooth span with its own
/// control law; adjacent legs meet at a recorded breakpoint.
struct Builder<'a> {
    problem: &'a ControlProblem,
    traj: Trajectory,
}

impl<'a> Builder<'a> {
    fn new(problem: &'a ControlProblem, t0: f64, x0: &DVector<f64>) -> Result<Self, FlowError> {
        if x0.len() != problem.state_dim() {
            return Err(FlowError::Dimension {
                expected: problem.state_dim(),
                found: x0.len(),
            });
        }
        Ok(Self {
            problem,
            traj: Trajectory {
                times: vec![t0],
                states: vec![x0.clone()],
                controls: Vec::new(),
                cost: vec![0.0],
                breakpoints: Vec::new(),
                stage_controls: Vec::new(),
                law: None,
            },
        })
    }

    fn leg(
        &mut self,
        start: f64,
        duration: f64,
        base: f64,
        law: impl Fn(f64) -> Result<DVector<f64>, FlowError>,
    ) -> Result<(), FlowError> {
        let n = steps_for(duration, base);
        let h = duration / n as f64;
        if !self.traj.stage_controls.is_empty() {
            self.traj.breakpoints.push(self.traj.len() - 1);
        }
        for s in 0..n {
            let t = start + s as f64 * h;
            let t_next = if s + 1 == n {
                start + duration
            } else {
                start + (s + 1) as f64 * h
            };
            let step = t_next - t;
            let mid = law(t + 0.5 * step)?;
            let u: StageControls = [law(t)?, mid.clone(), mid, law(t_next)?];
            let x = self.traj.states.last().unwrap();
            let j = *self.traj.cost.last().unwrap();
            let (xn, jn) = rk4_step(self.problem, t, step, x, j, &u)?;
            if self.traj.controls.is_empty() {
                self.traj.controls.push(u[0].clone());
            }
            self.traj.controls.push(u[3].clone());
            self.traj.times.push(t_next);
            self.traj.states.push(xn);
            self.traj.cost.push(jn);
            self.traj.stage_controls.push(u);
        }
        Ok(())
    }

    fn finish(mut self, fallback_control: DVector<f64>) -> Trajectory {
        if self.traj.controls.is_empty() {
            self.traj.controls.push(fallback_control);
        }
        self.traj
    }
}

/// Integrate `x0` under a piecewise control with fixed-step RK4.
///
/// The grid has step `(b − a)/steps`, locally shrunk so each breakpoint is
/// a node and no step straddles a control discontinuity. The cost `J` is
/// integrated as an extra state starting at 0.
pub fn integrate(
    problem: &ControlProblem,
    control: &PiecewiseControl,
    x0: &DVector<f64>,
    config: FlowConfig,
) -> Result<Trajectory, FlowError> {
    let (a, b) = problem.horizon();
    let base = (b - a) / config.steps.max(1) as f64;
    let mut builder = Builder::new(problem, a, x0)?;
    let bps = control.breakpoints();
    for (i, w) in bps.windows(2).enumerate() {
        builder.leg(w[0], w[1] - w[0], base, |t| {
            Ok(control.value_on_piece(i, t)?)
        })?;
    }
    let fallback = control.value(a)?;
    let mut traj = builder.finish(fallback);
    traj.law = Some(control.clone());
    Ok(traj)
}

/// Run the legs of `schedule` in order from `x0`, starting the clock at `a`.
///
/// Zero-duration legs contribute nothing. Returns the endpoint and the
/// concatenated trajectory.
pub fn composite_flow(
    problem: &ControlProblem,
    schedule: &CompositeFlowSchedule,
    x0: &DVector<f64>,
    config: FlowConfig,
) -> Result<(DVector<f64>, Trajectory), FlowError> {
    schedule.check(problem)?;
    let (a, b) = problem.horizon();
    let base = (b - a) / config.steps.max(1) as f64;
    let mut builder = Builder::new(problem, a, x0)?;
    let mut clock = a;
    for leg in &schedule.legs {
        let start = leg.clock.unwrap_or(clock);
        if leg.duration > 0.0 {
            builder.leg(start, leg.duration, base, |t| Ok(leg.control.value(t)?))?;
        }
        clock = start + leg.duration;
    }
    let fallback = match schedule.legs.first() {
        Some(leg) => leg.control.value(leg.clock.unwrap_or(a))?,
        None => DVector::zeros(problem.control_dim()),
    };
    let traj = builder.finish(fallback);
    Ok((traj.final_state().clone(), traj))
}

/// Re-run steps `from..to` of `traj` from `(x, j)` with the stored stage controls.
pub fn replay(
    problem: &ControlProblem,
    traj: &Trajectory,
    from: usize,
    to: usize,
    x: &DVector<f64>,
    j: f64,
) -> Result<(DVector<f64>, f64), FlowError> {
    let mut x = x.clone();
    let mut j = j;
    for s in from..to {
        let t = traj.times[s];
        let h = traj.times[s + 1] - t;
        (x, j) = rk4_step(problem, t, h, &x, j, &traj.stage_controls[s])?;
    }
    Ok((x, j))
}
