//! Sampling of needle times and alternative control values.
//!
//! Fiber samplers are strategies behind [`FiberSampler`], looked up by name
//! in a [`SamplerRegistry`]. The default registry holds `grid`,
//! `latin-hypercube`, `gaussian-shells` and `auto`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::flow::Trajectory;
use crate::system::Fiber;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("unknown fiber sampler `{name}` (available: {available})")]
    UnknownSampler { name: String, available: String },
    #[error("sample counts must be positive")]
    ZeroSamples,
}

/// How many needle times and fiber points to draw, from which seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingConfig {
    pub time_samples: usize,
    pub fiber_samples: usize,
    pub seed: u64,
    pub sampler: String,
    /// Also add the one-sided derivative directions `±∂ρ/∂u_a` at each
    /// sampled time, limits of needles with `u′ → u(τ)`.
    pub tangents: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            time_samples: 64,
            fiber_samples: 64,
            seed: 0,
            sampler: "auto".into(),
            tangents: true,
        }
    }
}

impl SamplingConfig {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// A strategy for drawing alternative control values `u′` from the fiber.
pub trait FiberSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// About `count` points of `fiber`; `reference` is `u(τ)`.
    fn sample(
        &self,
        fiber: &Fiber,
        reference: &DVector<f64>,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>>;
}

/// Half-width of the search box around `u(τ)` for unconstrained fibers.
fn unconstrained_radius(reference: &DVector<f64>) -> f64 {
    2.0 * (1.0 + reference.amax())
}

fn bounds(fiber: &Fiber, reference: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    match fiber {
        Fiber::Box { lo, hi } => (lo.clone(), hi.clone()),
        _ => {
            let r = unconstrained_radius(reference);
            (
                reference.iter().map(|u| u - r).collect(),
                reference.iter().map(|u| u + r).collect(),
            )
        }
    }
}

fn grid_points(fiber: &Fiber) -> Option<Vec<DVector<f64>>> {
    match fiber {
        Fiber::Grid { points } => Some(
            points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect(),
        ),
        _ => None,
    }
}

/// Tensor grid with the same number of levels per axis, bounds included.
pub struct GridSampler;

impl FiberSampler for GridSampler {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn sample(
        &self,
        fiber: &Fiber,
        reference: &DVector<f64>,
        count: usize,
        _: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        if let Some(points) = grid_points(fiber) {
            return points;
        }
        let k = reference.len();
        let (lo, hi) = bounds(fiber, reference);
        let levels = ((count as f64).powf(1.0 / k as f64).round() as usize).max(2);
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
}

/// Latin hypercube over the box (or a box around `u(τ)`).
pub struct LatinHypercubeSampler;

impl FiberSampler for LatinHypercubeSampler {
    fn name(&self) -> &'static str {
        "latin-hypercube"
    }

    fn sample(
        &self,
        fiber: &Fiber,
        reference: &DVector<f64>,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        if let Some(points) = grid_points(fiber) {
            return points;
        }
        let k = reference.len();
        let (lo, hi) = bounds(fiber, reference);
        let strata: Vec<Vec<usize>> = (0..k)
            .map(|_| {
                let mut perm: Vec<usize> = (0..count).collect();
                perm.shuffle(rng);
                perm
            })
            .collect();
        (0..count)
            .map(|i| {
                DVector::from_fn(k, |a, _| {
                    let cell = strata[a][i] as f64 + rng.random::<f64>();
                    lo[a] + (hi[a] - lo[a]) * cell / count as f64
                })
            })
            .collect()
    }
}

/// Gaussian perturbations of `u(τ)` at scales cycling through 0.5, 1, 2,
/// clamped into a box fiber.
pub struct GaussianShellsSampler;

impl FiberSampler for GaussianShellsSampler {
    fn name(&self) -> &'static str {
        "gaussian-shells"
    }

    fn sample(
        &self,
        fiber: &Fiber,
        reference: &DVector<f64>,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        if let Some(points) = grid_points(fiber) {
            return points;
        }
        const SCALES: [f64; 3] = [0.5, 1.0, 2.0];
        let k = reference.len();
        (0..count)
            .map(|i| {
                let scale = SCALES[i % SCALES.len()];
                let mut u = DVector::from_fn(k, |a, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    reference[a] + scale * z
                });
                if let Fiber::Box { lo, hi } = fiber {
                    for a in 0..k {
                        u[a] = u[a].clamp(lo[a], hi[a]);
                    }
                }
                u
            })
            .collect()
    }
}

/// Latin hypercube on box fibers, Gaussian shells on unconstrained ones,
/// all points of a grid fiber.
pub struct AutoSampler;

impl FiberSampler for AutoSampler {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn sample(
        &self,
        fiber: &Fiber,
        reference: &DVector<f64>,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        match fiber {
            Fiber::Box { .. } => LatinHypercubeSampler.sample(fiber, reference, count, rng),
            Fiber::Unconstrained => GaussianShellsSampler.sample(fiber, reference, count, rng),
            Fiber::Grid { .. } => GridSampler.sample(fiber, reference, count, rng),
        }
    }
}

/// Name-indexed collection of fiber samplers.
pub struct SamplerRegistry {
    entries: Vec<Box<dyn FiberSampler>>,
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: Vec::new(),
        };
        r.register(Box::new(GridSampler));
        r.register(Box::new(LatinHypercubeSampler));
        r.register(Box::new(GaussianShellsSampler));
        r.register(Box::new(AutoSampler));
        r
    }
}

impl SamplerRegistry {
    /// Adds a sampler, replacing any existing one with the same name.
    pub fn register(&mut self, sampler: Box<dyn FiberSampler>) {
        self.entries.retain(|s| s.name() != sampler.name());
        self.entries.push(sampler);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn FiberSampler, SamplingError> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| SamplingError::UnknownSampler {
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

/// Node indices in `1..=N` for needle times: one uniform draw per stratum,
/// or every node when `count ≥ N`.
pub fn sample_times(traj: &Trajectory, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = traj.steps();
    if count >= n {
        return (1..=n).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|s| {
            let lo = 1 + s * n / count;
            let hi = 1 + (s + 1) * n / count;
            rng.random_range(lo..hi)
        })
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, FlowConfig};
    use crate::system::{catalog, PiecewiseControl};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn registry_lookup() {
        let reg = SamplerRegistry::default();
        assert_eq!(
            reg.names(),
            vec!["grid", "latin-hypercube", "gaussian-shells", "auto"]
        );
        assert_eq!(reg.get("grid").unwrap().name(), "grid");
        let err = reg.get("sobol").err().unwrap();
        assert!(err.to_string().contains("sobol"), "{err}");
    }

    #[test]
    fn latin_hypercube_fills_each_stratum_once() {
        let fiber = Fiber::Box {
            lo: vec![0.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        let pts = LatinHypercubeSampler.sample(&fiber, &DVector::zeros(2), 16, &mut rng());
        assert_eq!(pts.len(), 16);
        for a in 0..2 {
            let (lo, hi) = if a == 0 { (0.0, 1.0) } else { (-1.0, 1.0) };
            let mut cells: Vec<usize> = pts
                .iter()
                .map(|p| ((p[a] - lo) / (hi - lo) * 16.0) as usize)
                .collect();
            cells.sort();
            assert_eq!(cells, (0..16).collect::<Vec<_>>());
        }
        assert!(pts.iter().all(|p| fiber.contains(p.as_slice())));
    }

    #[test]
    fn grid_covers_box_corners() {
        let fiber = Fiber::Box {
            lo: vec![-1.0, -2.0],
            hi: vec![1.0, 2.0],
        };
        let pts = GridSampler.sample(&fiber, &DVector::zeros(2), 9, &mut rng());
        assert_eq!(pts.len(), 9);
        assert!(pts.contains(&DVector::from_column_slice(&[1.0, -2.0])));
        assert!(pts.contains(&DVector::from_column_slice(&[0.0, 0.0])));
    }

    #[test]
    fn grid_fibers_use_their_points() {
        let fiber = Fiber::Grid {
            points: vec![vec![0.0], vec![1.0]],
        };
        for name in ["grid", "latin-hypercube", "gaussian-shells", "auto"] {
            let s = SamplerRegistry::default();
            let pts = s
                .get(name)
                .unwrap()
                .sample(&fiber, &DVector::zeros(1), 50, &mut rng());
            assert_eq!(pts.len(), 2);
        }
    }

    #[test]
    fn shells_are_seeded_and_clamped() {
        let fiber = Fiber::Box {
            lo: vec![-0.1],
            hi: vec![0.1],
        };
        let u = DVector::zeros(1);
        let a = GaussianShellsSampler.sample(&fiber, &u, 30, &mut rng());
        let b = GaussianShellsSampler.sample(&fiber, &u, 30, &mut rng());
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p[0].abs() <= 0.1));
    }

    #[test]
    fn times_are_stratified() {
        let p = catalog("lqr1d").unwrap();
        let c = PiecewiseControl::constant(&p, &[1.0]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(1), FlowConfig::with_steps(100)).unwrap();
        let ts = sample_times(&tr, 10, &mut rng());
        assert_eq!(ts.len(), 10);
        for (s, &t) in ts.iter().enumerate() {
            assert!((1 + 10 * s..1 + 10 * (s + 1)).contains(&t));
        }
        assert_eq!(
            sample_times(&tr, 500, &mut rng()),
            (1..=100).collect::<Vec<_>>()
        );
    }
}
