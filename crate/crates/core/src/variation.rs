//! Needle variations, the cones they generate, and their realization as
//! perturbed flows.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{Cone, ConeError};
use crate::flow::{replay, rk4_step, transports_to_end, FlowError, StageControls, Trajectory};
use crate::sampling::{sample_times, SamplerRegistry, SamplingConfig, SamplingError};
use crate::system::{ControlProblem, Fiber, SystemError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VariationError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error("needle time {0} must lie in (a, b]")]
    TimeOutOfRange(f64),
    #[error("needle weight must be finite and nonnegative, got {0}")]
    BadWeight(f64),
    #[error("alternative control has length {found}, expected {expected}")]
    ControlDimension { expected: usize, found: usize },
    #[error("needles must be sorted by time with reverse legs first at equal times")]
    Unsorted,
    #[error("eps = {eps} is too large: a shortened leg would have negative duration")]
    EpsilonTooLarge { eps: f64 },
    #[error("eps must be finite and nonnegative, got {0}")]
    BadEpsilon(f64),
    #[error("reverse-leg needles need a trajectory produced from a piecewise control")]
    NoControlLaw,
}

/// What a needle inserts at its time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeedleKind {
    /// Run the constant control `u` for the needle's duration.
    AltControl { u: Vec<f64> },
    /// Shorten the reference leg that ends at the needle time.
    ReverseLeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub tau: f64,
    #[serde(flatten)]
    pub kind: NeedleKind,
    pub weight: f64,
}

impl NeedleSpec {
    pub fn alt(tau: f64, u: &[f64], weight: f64) -> Self {
        Self {
            tau,
            kind: NeedleKind::AltControl { u: u.to_vec() },
            weight,
        }
    }

    pub fn reverse(tau: f64, weight: f64) -> Self {
        Self {
            tau,
            kind: NeedleKind::ReverseLeg,
            weight,
        }
    }

    fn order(&self) -> u8 {
        match self.kind {
            NeedleKind::ReverseLeg => 0,
            NeedleKind::AltControl { .. } => 1,
        }
    }
}

/// Node index of a needle time, which must be a node in `(a, b]`.
fn needle_node(traj: &Trajectory, tau: f64) -> Result<usize, VariationError> {
    let k = traj.node_index(tau)?;
    if k == 0 {
        return Err(VariationError::TimeOutOfRange(tau));
    }
    Ok(k)
}

fn control_vector(problem: &ControlProblem, u: &[f64]) -> Result<DVector<f64>, VariationError> {
    if u.len() != problem.control_dim() {
        return Err(VariationError::ControlDimension {
            expected: problem.control_dim(),
            found: u.len(),
        });
    }
    Ok(DVector::from_column_slice(u))
}

/// Velocity and cost rate at node `k` of `traj` under control `u`.
fn field_at(
    problem: &ControlProblem,
    traj: &Trajectory,
    k: usize,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, f64), VariationError> {
    Ok(problem.dynamics_at(traj.times()[k], &traj.states()[k], u)?)
}

/// Tangent vector of a single needle at the endpoint, scaled by its weight.
pub fn needle_vector(
    problem: &ControlProblem,
    traj: &Trajectory,
    spec: &NeedleSpec,
) -> Result<DVector<f64>, VariationError> {
    let k = needle_node(traj, spec.tau)?;
    let b = *traj.times().last().unwrap();
    let field = match &spec.kind {
        NeedleKind::AltControl { u } => field_at(problem, traj, k, &control_vector(problem, u)?)?.0,
        NeedleKind::ReverseLeg => -field_at(problem, traj, k, &traj.controls()[k])?.0,
    };
    let t = crate::flow::transport(problem, traj, traj.times()[k], b)?;
    Ok(t.apply(&field) * spec.weight)
}

/// `T(τ → b)(ρ(u′) − ρ(u(τ)))`.
pub fn vertical_needle_vector(
    problem: &ControlProblem,
    traj: &Trajectory,
    tau: f64,
    u_alt: &[f64],
) -> Result<DVector<f64>, VariationError> {
    let k = needle_node(traj, tau)?;
    let (alt, _) = field_at(problem, traj, k, &control_vector(problem, u_alt)?)?;
    let (reference, _) = field_at(problem, traj, k, &traj.controls()[k])?;
    let b = *traj.times().last().unwrap();
    let t = crate::flow::transport(problem, traj, traj.times()[k], b)?;
    Ok(t.apply(&(alt - reference)))
}

/// Extended transport of `(ρ(u′) − ρ(u(τ)), L(u′) − L(u(τ)))`.
pub fn extended_vertical_needle(
    problem: &ControlProblem,
    traj: &Trajectory,
    tau: f64,
    u_alt: &[f64],
) -> Result<DVector<f64>, VariationError> {
    let k = needle_node(traj, tau)?;
    let (alt, l_alt) = field_at(problem, traj, k, &control_vector(problem, u_alt)?)?;
    let (reference, l_ref) = field_at(problem, traj, k, &traj.controls()[k])?;
    let b = *traj.times().last().unwrap();
    let t = crate::flow::extended_transport(problem, traj, traj.times()[k], b)?;
    Ok(t.apply(&extend(&(alt - reference), l_alt - l_ref)))
}

fn extend(v: &DVector<f64>, last: f64) -> DVector<f64> {
    let d = v.len();
    DVector::from_fn(d + 1, |i, _| if i < d { v[i] } else { last })
}

/// Sampled needle times and, for each, the alternative control values.
struct Draw {
    nodes: Vec<usize>,
    alternatives: Vec<Vec<DVector<f64>>>,
}

fn draw(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
) -> Result<Draw, VariationError> {
    if cfg.time_samples == 0 || cfg.fiber_samples == 0 {
        return Err(SamplingError::ZeroSamples.into());
    }
    let registry = SamplerRegistry::default();
    let sampler = registry.get(&cfg.sampler)?;
    let mut rng = cfg.rng();
    let nodes = sample_times(traj, cfg.time_samples, &mut rng);
    let alternatives = nodes
        .iter()
        .map(|&k| {
            sampler.sample(
                problem.fiber(),
                &traj.controls()[k],
                cfg.fiber_samples,
                &mut rng,
            )
        })
        .collect();
    Ok(Draw {
        nodes,
        alternatives,
    })
}

/// Admissible one-sided directions `±e_a` at `u` for the fiber.
fn tangent_directions(fiber: &Fiber, u: &DVector<f64>) -> Vec<(usize, f64)> {
    let k = u.len();
    match fiber {
        Fiber::Unconstrained => (0..k).flat_map(|a| [(a, 1.0), (a, -1.0)]).collect(),
        Fiber::Box { lo, hi } => {
            let mut out = Vec::new();
            for a in 0..k {
                let slack = 1e-9 * (hi[a] - lo[a]);
                if u[a] < hi[a] - slack {
                    out.push((a, 1.0));
                }
                if u[a] > lo[a] + slack {
                    out.push((a, -1.0));
                }
            }
            out
        }
        Fiber::Grid { .. } => Vec::new(),
    }
}

/// Vertical generators in `ℝ^{d+1}` (or `ℝ^d` when `extended` is false).
/// Tangent directions for all sampled times come first, then the needles.
fn vertical_generators(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
    extended: bool,
) -> Result<Vec<DVector<f64>>, VariationError> {
    let sample = draw(problem, traj, cfg)?;
    let to_end = transports_to_end(problem, traj, extended)?;
    let lift = |k: usize, v: DVector<f64>, l: f64| {
        let w = if extended { extend(&v, l) } else { v };
        &to_end[k] * w
    };
    let mut tangents = Vec::new();
    let mut needles = Vec::new();
    for (&k, alts) in sample.nodes.iter().zip(&sample.alternatives) {
        let u = &traj.controls()[k];
        let (reference, l_ref) = field_at(problem, traj, k, u)?;
        if cfg.tangents {
            let jac = problem.jacobians_at(traj.times()[k], &traj.states()[k], u)?;
            for (a, sign) in tangent_directions(problem.fiber(), u) {
                tangents.push(lift(k, jac.b.column(a) * sign, jac.lu[a] * sign));
            }
        }
        for alt in alts {
            let (v, l) = field_at(problem, traj, k, alt)?;
            needles.push(lift(k, v - &reference, l - l_ref));
        }
    }
    tangents.extend(needles);
    Ok(tangents)
}

/// Sampled vertical variational cone in `ℝ^d`.
pub fn vertical_cone(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
) -> Result<Cone, VariationError> {
    let gens = vertical_generators(problem, traj, cfg, false)?;
    Ok(Cone::new(problem.state_dim(), gens)?)
}

/// Sampled vertical cone of the cost-extended system in `ℝ^{d+1}`; the
/// last coordinate is the cost.
pub fn extended_vertical_cone(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
) -> Result<Cone, VariationError> {
    let gens = vertical_generators(problem, traj, cfg, true)?;
    Ok(Cone::new(problem.state_dim() + 1, gens)?)
}

/// Sampled variational cone in `ℝ × ℝ^d`, the first coordinate being time.
///
/// Alternative controls (including `u(τ)` itself) give `(1, T ρ(u′))`,
/// reverse legs give `(−1, −T ρ(u(τ)))`.
pub fn variational_cone(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
) -> Result<Cone, VariationError> {
    let d = problem.state_dim();
    let sample = draw(problem, traj, cfg)?;
    let to_end = transports_to_end(problem, traj, false)?;
    let with_time = |time: f64, v: DVector<f64>| {
        DVector::from_fn(d + 1, |i, _| if i == 0 { time } else { v[i - 1] })
    };
    let mut gens = Vec::new();
    for (&k, alts) in sample.nodes.iter().zip(&sample.alternatives) {
        let u = &traj.controls()[k];
        let (reference, _) = field_at(problem, traj, k, u)?;
        gens.push(with_time(1.0, &to_end[k] * &reference));
        gens.push(with_time(-1.0, -(&to_end[k] * &reference)));
        if cfg.tangents {
            let jac = problem.jacobians_at(traj.times()[k], &traj.states()[k], u)?;
            for (a, sign) in tangent_directions(problem.fiber(), u) {
                gens.push(with_time(0.0, &to_end[k] * (jac.b.column(a) * sign)));
            }
        }
        for alt in alts {
            let (v, _) = field_at(problem, traj, k, alt)?;
            gens.push(with_time(1.0, &to_end[k] * v));
        }
    }
    Ok(Cone::new(d + 1, gens)?)
}

/// Endpoint and cost of the flow perturbed by `needles` at size `eps`.
///
/// The run follows the reference grid. An alternative-control needle adds
/// a constant-control leg of duration `eps·δ` at `τ`, clocked from `τ`; a
/// reverse leg drops the last `eps·δ` of reference time before `τ`. The
/// inserted time is not subtracted elsewhere, so the total duration
/// changes; only the endpoint matters. With `eps = 0` the reference
/// endpoint is reproduced exactly.
pub fn multi_needle_endpoint(
    problem: &ControlProblem,
    x0: &DVector<f64>,
    traj: &Trajectory,
    needles: &[NeedleSpec],
    eps: f64,
) -> Result<(DVector<f64>, f64), VariationError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(VariationError::BadEpsilon(eps));
    }
    if x0.len() != problem.state_dim() {
        return Err(FlowError::Dimension {
            expected: problem.state_dim(),
            found: x0.len(),
        }
        .into());
    }
    let mut placed = Vec::with_capacity(needles.len());
    for n in needles {
        if !(n.weight >= 0.0 && n.weight.is_finite()) {
            return Err(VariationError::BadWeight(n.weight));
        }
        let k = needle_node(traj, n.tau)?;
        if let NeedleKind::AltControl { u } = &n.kind {
            let u = control_vector(problem, u)?;
            if !problem.fiber().contains(u.as_slice()) {
                return Err(SystemError::FiberViolation {
                    t: n.tau,
                    u: u.iter().copied().collect(),
                }
                .into());
            }
        }
        placed.push((k, n));
    }
    if placed
        .windows(2)
        .any(|w| (w[1].0, w[1].1.order()) < (w[0].0, w[0].1.order()))
    {
        return Err(VariationError::Unsorted);
    }
    placed.retain(|(_, n)| n.weight > 0.0);

    let times = traj.times();
    let span = (times[times.len() - 1] - times[0]).abs().max(1.0);
    let mut x = x0.clone();
    let mut j = 0.0;
    let mut node = 0;
    let mut i = 0;
    while i < placed.len() {
        let k = placed[i].0;
        let group_end = placed[i..]
            .iter()
            .position(|(kk, _)| *kk != k)
            .map_or(placed.len(), |p| i + p);
        let group = &placed[i..group_end];
        let shrink: f64 = group
            .iter()
            .filter(|(_, n)| matches!(n.kind, NeedleKind::ReverseLeg))
            .map(|(_, n)| eps * n.weight)
            .sum();
        if shrink > 0.0 {
            let target = times[k] - shrink;
            if target < times[node] - 1e-12 * span {
                return Err(VariationError::EpsilonTooLarge { eps });
            }
            let m = (times.partition_point(|&t| t <= target) - 1).max(node);
            (x, j) = replay(problem, traj, node, m, &x, j)?;
            let partial = target - times[m];
            if partial > 1e-14 * span {
                let law = traj.control_law().ok_or(VariationError::NoControlLaw)?;
                let piece = law.piece_at(0.5 * (times[m] + times[m + 1]));
                let at = |t: f64| law.value_on_piece(piece, t);
                let mid = at(times[m] + 0.5 * partial)?;
                let u: StageControls = [at(times[m])?, mid.clone(), mid, at(target)?];
                (x, j) = rk4_step(problem, times[m], partial, &x, j, &u)?;
            }
        } else {
            (x, j) = replay(problem, traj, node, k, &x, j)?;
        }
        node = k;
        let h_ref = times[k] - times[k - 1];
        let mut clock = times[k];
        for (_, n) in group {
            if let NeedleKind::AltControl { u } = &n.kind {
                let duration = eps * n.weight;
                if duration <= 0.0 {
                    continue;
                }
                let u = DVector::from_column_slice(u);
                let steps = ((duration / h_ref) - 1e-9).ceil().max(1.0) as usize;
                let h = duration / steps as f64;
                let stage: StageControls = [u.clone(), u.clone(), u.clone(), u];
                for s in 0..steps {
                    (x, j) = rk4_step(problem, clock + s as f64 * h, h, &x, j, &stage)?;
                }
                clock += duration;
            }
        }
        i = group_end;
    }
    (x, j) = replay(problem, traj, node, traj.steps(), &x, j)?;
    Ok((x, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, FlowConfig};
    use crate::system::{catalog, PiecewiseControl, ProblemDef};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn reference(name: &str, u: &[f64], steps: usize) -> (ControlProblem, Trajectory) {
        let p = catalog(name).unwrap();
        let c = PiecewiseControl::constant(&p, u).unwrap();
        let tr = integrate(
            &p,
            &c,
            &DVector::zeros(p.state_dim()),
            FlowConfig::with_steps(steps),
        )
        .unwrap();
        (p, tr)
    }

    fn small() -> SamplingConfig {
        SamplingConfig {
            time_samples: 8,
            fiber_samples: 8,
            seed: 3,
            ..SamplingConfig::default()
        }
    }

    #[test]
    fn single_needle_vectors() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        assert_eq!(
            needle_vector(&p, &tr, &NeedleSpec::alt(0.5, &[2.0], 1.0)).unwrap(),
            v(&[2.0])
        );
        assert_eq!(
            needle_vector(&p, &tr, &NeedleSpec::reverse(0.5, 1.0)).unwrap(),
            v(&[-1.0])
        );
        let (p, tr) = reference("martinet", &[1.0, 0.0], 100);
        let n = needle_vector(&p, &tr, &NeedleSpec::alt(0.5, &[0.0, 1.0], 1.0)).unwrap();
        assert!((n - v(&[0.0, 1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn needle_errors() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        let off = NeedleSpec::alt(0.505, &[2.0], 1.0);
        assert!(matches!(
            needle_vector(&p, &tr, &off),
            Err(VariationError::Flow(FlowError::OffGrid { .. }))
        ));
        let start = NeedleSpec::alt(0.0, &[2.0], 1.0);
        assert!(matches!(
            needle_vector(&p, &tr, &start),
            Err(VariationError::TimeOutOfRange(_))
        ));
        let mut def = p.def().clone();
        def.fiber = Fiber::Box {
            lo: vec![-1.5],
            hi: vec![1.5],
        };
        let boxed = ControlProblem::new(def).unwrap();
        let err = needle_vector(&boxed, &tr, &NeedleSpec::alt(0.5, &[2.0], 1.0)).unwrap_err();
        assert!(matches!(
            err,
            VariationError::System(SystemError::FiberViolation { .. })
        ));
    }

    #[test]
    fn weight_scales_linearly() {
        let (p, tr) = reference("heisenberg", &[1.0, 0.5], 50);
        let one = needle_vector(&p, &tr, &NeedleSpec::alt(0.4, &[-1.0, 2.0], 1.0)).unwrap();
        let two = needle_vector(&p, &tr, &NeedleSpec::alt(0.4, &[-1.0, 2.0], 2.0)).unwrap();
        assert_eq!(two, one * 2.0);
    }

    #[test]
    fn vertical_vectors() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        assert_eq!(
            vertical_needle_vector(&p, &tr, 0.3, &[1.0]).unwrap(),
            v(&[0.0])
        );
        assert_eq!(
            vertical_needle_vector(&p, &tr, 0.7, &[2.0]).unwrap(),
            v(&[1.0])
        );
        assert_eq!(
            extended_vertical_needle(&p, &tr, 0.5, &[0.0]).unwrap(),
            v(&[-1.0, -0.5])
        );
        assert_eq!(
            extended_vertical_needle(&p, &tr, 0.5, &[2.0]).unwrap(),
            v(&[1.0, 1.5])
        );
        assert_eq!(
            extended_vertical_needle(&p, &tr, 0.5, &[1.0]).unwrap(),
            v(&[0.0, 0.0])
        );
        let (p, tr) = reference("martinet", &[1.0, 0.0], 100);
        let w = vertical_needle_vector(&p, &tr, 0.5, &[0.0, 1.0]).unwrap();
        assert!((w - v(&[-1.0, 1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn vertical_vector_matches_needle_endpoint() {
        // For a needle of width ε, endpoint − y ≈ ε(T ρ(u′)) and the vertical
        // vector adds the reverse leg.
        let p = catalog("heisenberg").unwrap();
        let c = PiecewiseControl::formulas(&p, &["cos(t)", "sin(t)"]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(3), FlowConfig::with_steps(1000)).unwrap();
        let needles = [
            NeedleSpec::reverse(0.6, 1.0),
            NeedleSpec::alt(0.6, &[0.5, -1.0], 1.0),
        ];
        let w = vertical_needle_vector(&p, &tr, 0.6, &[0.5, -1.0]).unwrap();
        let eps = 1e-4;
        let (end, _) = multi_needle_endpoint(&p, tr.initial_state(), &tr, &needles, eps).unwrap();
        let fd = (end - tr.final_state()) / eps;
        assert!((fd - w).amax() < 1e-3);
    }

    #[test]
    fn martinet_vertical_cone_is_flat() {
        let (p, tr) = reference("martinet", &[1.0, 0.0], 200);
        let cone = vertical_cone(&p, &tr, &small()).unwrap();
        assert!(cone.generators().iter().all(|g| g[2] == 0.0));
        assert_eq!(cone.dimension(), 2);
    }

    #[test]
    fn lqr_vertical_cone_is_the_line() {
        let (p, tr) = reference("lqr1d", &[1.0], 200);
        let cone = vertical_cone(
            &p,
            &tr,
            &SamplingConfig {
                tangents: false,
                ..small()
            },
        )
        .unwrap();
        assert!(cone.contains(&v(&[1.0])).unwrap() && cone.contains(&v(&[-1.0])).unwrap());
        assert!(cone.separating_covector(None).unwrap().is_none());
    }

    #[test]
    fn trivial_grid_gives_empty_cone() {
        let mut def: ProblemDef = catalog("lqr1d").unwrap().def().clone();
        def.fiber = Fiber::Grid {
            points: vec![vec![1.0]],
        };
        let p = ControlProblem::new(def).unwrap();
        let c = PiecewiseControl::constant(&p, &[1.0]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(1), FlowConfig::with_steps(50)).unwrap();
        let cone = vertical_cone(&p, &tr, &small()).unwrap();
        assert!(cone.is_empty());
    }

    #[test]
    fn plain_and_extended_cones_agree_without_cost() {
        let mut def = catalog("heisenberg").unwrap().def().clone();
        def.cost = "0".into();
        let p = ControlProblem::new(def).unwrap();
        let c = PiecewiseControl::formulas(&p, &["cos(t)", "sin(t)"]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(3), FlowConfig::with_steps(200)).unwrap();
        let plain = vertical_generators(&p, &tr, &small(), false).unwrap();
        let ext = vertical_generators(&p, &tr, &small(), true).unwrap();
        assert_eq!(plain.len(), ext.len());
        for (a, b) in plain.iter().zip(&ext) {
            assert!((a - b.rows(0, 3)).amax() < 1e-14);
            assert_eq!(b[3], 0.0);
        }
    }

    #[test]
    fn cones_are_seeded() {
        let (p, tr) = reference("heisenberg", &[1.0, 0.0], 200);
        let a = extended_vertical_cone(&p, &tr, &small()).unwrap();
        let b = extended_vertical_cone(&p, &tr, &small()).unwrap();
        assert_eq!(a, b);
        let c = extended_vertical_cone(&p, &tr, &SamplingConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn variational_cone_of_lqr() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        let cone = variational_cone(&p, &tr, &small()).unwrap();
        let s = 0.5f64.sqrt();
        let has = |w: DVector<f64>| cone.generators().iter().any(|g| (g - &w).amax() < 1e-15);
        assert!(has(v(&[s, s])) && has(v(&[-s, -s])));
        assert!(cone.generators().iter().all(|g| g[0] != 0.0 || g[1] != 0.0));
        assert!(cone.contains(&v(&[0.0, 1.0])).unwrap());
        let (p, tr) = reference("heisenberg", &[0.3, 1.0], 100);
        let cone = variational_cone(
            &p,
            &tr,
            &SamplingConfig {
                tangents: false,
                ..small()
            },
        )
        .unwrap();
        let gens = cone.generators();
        for i in 0..gens.len() {
            for j in (i + 1..gens.len()).step_by(7) {
                let mix = &gens[i] * 0.3 + &gens[j] * 0.7;
                assert!(cone.contains(&mix).unwrap());
            }
        }
    }

    #[test]
    fn zero_eps_is_exact() {
        let p = catalog("heisenberg").unwrap();
        let c = PiecewiseControl::formulas(&p, &["cos(t)", "sin(2*t)"]).unwrap();
        let tr = integrate(&p, &c, &v(&[0.1, 0.0, 0.0]), FlowConfig::with_steps(100)).unwrap();
        let needles = [
            NeedleSpec::alt(0.2, &[1.0, 1.0], 1.0),
            NeedleSpec::reverse(0.5, 2.0),
            NeedleSpec::alt(0.5, &[0.0, -1.0], 0.5),
        ];
        let (x, j) = multi_needle_endpoint(&p, tr.initial_state(), &tr, &needles, 0.0).unwrap();
        assert_eq!(&x, tr.final_state());
        assert_eq!(j, tr.final_cost());
    }

    #[test]
    fn lqr_needle_is_first_order() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        let needle = [NeedleSpec::alt(0.5, &[2.0], 1.0)];
        let slope = |eps: f64| {
            (multi_needle_endpoint(&p, tr.initial_state(), &tr, &needle, eps)
                .unwrap()
                .0[0]
                - 1.0)
                / eps
        };
        for eps in [1e-2, 5e-3, 2.5e-3] {
            assert!((slope(eps) - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn martinet_needle_converges_at_first_order() {
        let (p, tr) = reference("martinet", &[1.0, 0.0], 1000);
        let needle = [NeedleSpec::alt(0.5, &[0.0, 1.0], 1.0)];
        let err = |eps: f64| {
            let (x, _) = multi_needle_endpoint(&p, tr.initial_state(), &tr, &needle, eps).unwrap();
            ((x - v(&[1.0, 0.0, 0.0])) / eps - v(&[0.0, 1.0, 0.0])).norm()
        };
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        assert!(
            (e1 / e2 - 2.0).abs() < 0.05 && (e2 / e3 - 2.0).abs() < 0.05,
            "{e1} {e2} {e3}"
        );
    }

    #[test]
    fn reverse_leg_realizes_its_vector() {
        let p = catalog("double_integrator").unwrap();
        let c = PiecewiseControl::formulas(&p, &["sin(4*t)"]).unwrap();
        let tr = integrate(&p, &c, &v(&[0.0, 1.0]), FlowConfig::with_steps(1000)).unwrap();
        let spec = NeedleSpec::reverse(0.7, 1.5);
        let vec = needle_vector(&p, &tr, &spec).unwrap();
        let err = |eps: f64| {
            let (x, _) = multi_needle_endpoint(
                &p,
                tr.initial_state(),
                &tr,
                std::slice::from_ref(&spec),
                eps,
            )
            .unwrap();
            ((x - tr.final_state()) / eps - &vec).norm()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn ordering_and_size_are_checked() {
        let (p, tr) = reference("lqr1d", &[1.0], 100);
        let x0 = tr.initial_state().clone();
        let bad = [
            NeedleSpec::alt(0.5, &[2.0], 1.0),
            NeedleSpec::reverse(0.5, 1.0),
        ];
        assert_eq!(
            multi_needle_endpoint(&p, &x0, &tr, &bad, 0.01).unwrap_err(),
            VariationError::Unsorted
        );
        let bad = [
            NeedleSpec::alt(0.5, &[2.0], 1.0),
            NeedleSpec::alt(0.2, &[2.0], 1.0),
        ];
        assert_eq!(
            multi_needle_endpoint(&p, &x0, &tr, &bad, 0.01).unwrap_err(),
            VariationError::Unsorted
        );
        let big = [NeedleSpec::reverse(0.2, 1.0)];
        assert!(matches!(
            multi_needle_endpoint(&p, &x0, &tr, &big, 0.5),
            Err(VariationError::EpsilonTooLarge { .. })
        ));
        // Shrinking exactly to the previous needle time is allowed.
        let (x, _) = multi_needle_endpoint(&p, &x0, &tr, &big, 0.2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-13);
        let zero = [NeedleSpec::alt(0.5, &[2.0], 0.0)];
        assert_eq!(
            multi_needle_endpoint(&p, &x0, &tr, &zero, 0.1).unwrap().0,
            *tr.final_state()
        );
        assert!(matches!(
            multi_needle_endpoint(&p, &x0, &tr, &zero, -0.1),
            Err(VariationError::BadEpsilon(_))
        ));
    }
}
