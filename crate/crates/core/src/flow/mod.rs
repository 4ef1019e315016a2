//! Trajectories, composite flows and linearized transport along them.
//!
//! Everything here runs on one fixed-step RK4 grid. A [`Trajectory`]
//! stores the control value used at each of the four RK4 stages of every
//! step, so transports and finite-difference replays re-run exactly the
//! same discrete flow that produced the stored states.

mod integrate;
mod transport;

use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::system::{PiecewiseControl, SystemError};

pub(crate) use integrate::rk4_step;
pub use integrate::{composite_flow, integrate, replay};
pub(crate) use transport::transports_to_end;
pub use transport::{
    adjoint_transport, extended_transport, fd_extended_transport_oracle, fd_flow_oracle,
    fd_transport_oracle, transport, transport_path, CovectorPath, TransportOperator,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("state became non-finite at t = {t}")]
    BlowUp { t: f64 },
    #[error("non-finite transport entries at t = {t}")]
    NonFinite { t: f64 },
    #[error("time {t} is not a node of the trajectory grid")]
    OffGrid { t: f64 },
    #[error("expected t0 <= t1, got t0 = {t0}, t1 = {t1}")]
    TimeOrder { t0: f64, t1: f64 },
    #[error("initial state has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Grid resolution: `steps` RK4 steps over the horizon, refined so every
/// control breakpoint is a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { steps: 1000 }
    }
}

impl FlowConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self { steps }
    }
}

/// Controls used at the four RK4 stages of one step.
pub type StageControls = [DVector<f64>; 4];

/// Discrete controlled trajectory with its accumulated cost `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub(crate) times: Vec<f64>,
    pub(crate) states: Vec<DVector<f64>>,
    /// Node values, left-continuous at breakpoints.
    pub(crate) controls: Vec<DVector<f64>>,
    pub(crate) cost: Vec<f64>,
    /// Interior node indices where the control may jump.
    pub(crate) breakpoints: Vec<usize>,
    pub(crate) stage_controls: Vec<StageControls>,
    /// Control law that produced the trajectory, when it came from [`integrate`].
    pub(crate) law: Option<PiecewiseControl>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.stage_controls.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    pub fn stage_controls(&self, step: usize) -> &StageControls {
        &self.stage_controls[step]
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least one node")
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost.last().expect("trajectory has at least one node")
    }

    pub fn control_law(&self) -> Option<&PiecewiseControl> {
        self.law.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Node index of time `t`, accepting rounding-level mismatch.
    pub fn node_index(&self, t: f64) -> Result<usize, FlowError> {
        let first = self.times[0];
        let last = *self.times.last().unwrap();
        let tol = 1e-9 * (last - first).abs().max(1.0);
        let i = self.times.partition_point(|&s| s < t - tol);
        match self.times.get(i) {
            Some(&s) if (s - t).abs() <= tol => Ok(i),
            _ => Err(FlowError::OffGrid { t }),
        }
    }

    /// Node ranges `[start, end]` of the smooth pieces.
    pub fn smooth_pieces(&self) -> Vec<(usize, usize)> {
        let mut cuts = vec![0];
        cuts.extend(self.breakpoints.iter().copied());
        cuts.push(self.len() - 1);
        cuts.dedup();
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// CSV dump: `t,x1..xd,u1..uk,J`, one row per node, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.state_dim();
        let k = self.controls[0].len();
        let mut out = String::from("t");
        for i in 1..=d {
            let _ = write!(out, ",x{i}");
        }
        for a in 1..=k {
            let _ = write!(out, ",u{a}");
        }
        out.push_str(",J\n");
        for j in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.times[j]);
            for v in self.states[j].iter().chain(self.controls[j].iter()) {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(out, ",{:.16e}", self.cost[j]);
        }
        out
    }
}
