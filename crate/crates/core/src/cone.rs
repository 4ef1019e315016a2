//! Finitely generated convex cones and their duals.
//!
//! A [`Cone`] is the set of nonnegative combinations of its generators,
//! which are stored normalized to unit length. The dual used throughout is
//! the polar `{η : ⟨η, g⟩ ≤ 0 for every generator g}`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::{self, LpError};

/// Generators shorter than this are treated as zero and dropped.
pub const ZERO_GENERATOR: f64 = 1e-12;
/// Relative singular-value cutoff used for the numerical dimension.
pub const RANK_TOL: f64 = 1e-10;
/// Largest ambient dimension accepted by [`Cone::dual_rays`].
pub const MAX_DUAL_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConeError {
    #[error("vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("generator {0} has a non-finite entry")]
    NonFinite(usize),
    #[error("dual ray enumeration supports ambient dimension up to {MAX_DUAL_DIM}, got {0}")]
    TooLarge(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A covector `η` in the dual cone together with `⟨η, v⟩` for the vector
/// it was asked to separate.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub eta: DVector<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    ambient: usize,
    generators: Vec<DVector<f64>>,
    dropped: usize,
}

impl Cone {
    /// Cone spanned by `generators` in `ℝ^ambient`. Zero generators are
    /// dropped and counted in [`Cone::dropped_zero`].
    pub fn new(ambient: usize, generators: Vec<DVector<f64>>) -> Result<Self, ConeError> {
        let mut kept = Vec::with_capacity(generators.len());
        let mut dropped = 0;
        for (i, g) in generators.into_iter().enumerate() {
            if g.len() != ambient {
                return Err(ConeError::Dimension {
                    expected: ambient,
                    found: g.len(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(ConeError::NonFinite(i));
            }
            let norm = g.norm();
            if norm <= ZERO_GENERATOR {
                dropped += 1;
            } else {
                kept.push(g / norm);
            }
        }
        Ok(Self {
            ambient,
            generators: kept,
            dropped,
        })
    }

    /// The trivial cone `{0}`.
    pub fn zero(ambient: usize) -> Self {
        Self {
            ambient,
            generators: Vec::new(),
            dropped: 0,
        }
    }

    pub fn from_slices(ambient: usize, generators: &[&[f64]]) -> Result<Self, ConeError> {
        Self::new(
            ambient,
            generators
                .iter()
                .map(|g| DVector::from_column_slice(g))
                .collect(),
        )
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn dropped_zero(&self) -> usize {
        self.dropped
    }

    fn check(&self, v: &DVector<f64>) -> Result<(), ConeError> {
        if v.len() != self.ambient {
            return Err(ConeError::Dimension {
                expected: self.ambient,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Generator matrix padded with zero columns to at least `ambient` columns,
    /// so the SVD always yields a full left basis.
    fn padded_matrix(&self) -> DMatrix<f64> {
        let cols = self.generators.len().max(self.ambient).max(1);
        let mut m = DMatrix::zeros(self.ambient, cols);
        for (j, g) in self.generators.iter().enumerate() {
            m.set_column(j, g);
        }
        m
    }

    fn svd(&self) -> (DMatrix<f64>, DVector<f64>) {
        let svd = self.padded_matrix().svd(true, false);
        (svd.u.expect("requested U"), svd.singular_values)
    }

    /// Dimension of the linear span, by SVD rank with a relative cutoff.
    pub fn dimension(&self) -> usize {
        if self.generators.is_empty() || self.ambient == 0 {
            return 0;
        }
        let (_, s) = self.svd();
        let max = s.max();
        s.iter().filter(|&&v| v > RANK_TOL * max).count()
    }

    /// `ℓ1` distance from `v` to the cone and the optimal dual covector.
    ///
    /// Solves `min 1ᵀ(α + β)` subject to `Gμ + α − β = v`, `μ, α, β ≥ 0`.
    /// The dual optimum `y` satisfies `⟨y, g⟩ ≤ 0`, `‖y‖∞ ≤ 1` and
    /// `⟨y, v⟩` equals the distance.
    fn l1_distance(&self, v: &DVector<f64>) -> Result<Separation, ConeError> {
        let n = self.ambient;
        let m = self.generators.len();
        let mut a = DMatrix::zeros(n, m + 2 * n);
        for (j, g) in self.generators.iter().enumerate() {
            a.set_column(j, g);
        }
        let mut c = DVector::zeros(m + 2 * n);
        for i in 0..n {
            a[(i, m + i)] = 1.0;
            a[(i, m + n + i)] = -1.0;
            c[m + i] = 1.0;
            c[m + n + i] = 1.0;
        }
        let sol = lp::solve(&a, v, &c)?;
        Ok(Separation {
            value: sol.objective,
            eta: sol.duals,
        })
    }

    fn membership_tol(v: &DVector<f64>) -> f64 {
        1e-9 * (1.0 + v.norm())
    }

    pub fn contains(&self, v: &DVector<f64>) -> Result<bool, ConeError> {
        self.check(v)?;
        if self.generators.is_empty() {
            return Ok(v.amax() <= Self::membership_tol(v));
        }
        Ok(self.l1_distance(v)?.value <= Self::membership_tol(v))
    }

    /// A nonzero `η` in the dual cone.
    ///
    /// With `Some(v)`, the covector also has `⟨η, v⟩ > 0`, and `None` is
    /// returned when `v` lies in the cone. Without a target, `None` means
    /// the cone is all of `ℝⁿ`. The returned `η` has `‖η‖∞ = 1`.
    pub fn separating_covector(
        &self,
        v: Option<&DVector<f64>>,
    ) -> Result<Option<Separation>, ConeError> {
        match v {
            Some(v) => {
                self.check(v)?;
                if self.generators.is_empty() {
                    if v.amax() <= Self::membership_tol(v) {
                        return Ok(None);
                    }
                    let eta = v / v.amax();
                    return Ok(Some(Separation {
                        value: eta.dot(v),
                        eta,
                    }));
                }
                let sep = self.l1_distance(v)?;
                if sep.value <= Self::membership_tol(v) {
                    return Ok(None);
                }
                Ok(Some(normalized(sep, v)))
            }
            None => {
                if self.ambient == 0 {
                    return Ok(None);
                }
                let dim = self.dimension();
                if dim < self.ambient {
                    let (u, s) = self.svd();
                    // Left singular vector of the smallest singular value.
                    let idx = s.imin();
                    let col = u.column(idx).into_owned();
                    let eta = &col / col.amax();
                    return Ok(Some(Separation { eta, value: 0.0 }));
                }
                // Full-dimensional: the cone is proper iff −Σg lies outside it.
                let target = -self
                    .generators
                    .iter()
                    .fold(DVector::zeros(self.ambient), |acc, g| acc + g);
                let sep = self.l1_distance(&target)?;
                if sep.value <= Self::membership_tol(&target) {
                    return Ok(None);
                }
                Ok(Some(normalized(sep, &target)))
            }
        }
    }

    /// Whether `v` is an interior point of the cone.
    ///
    /// Requires a full-dimensional cone and membership of every probe
    /// `v ± δe_j` with `δ = 1e-6·max(1, ‖v‖)`, so points within about `δ`
    /// of the boundary count as boundary points.
    pub fn in_interior(&self, v: &DVector<f64>) -> Result<bool, ConeError> {
        self.check(v)?;
        if self.ambient == 0 {
            return Ok(true);
        }
        if self.dimension() < self.ambient {
            return Ok(false);
        }
        let delta = 1e-6 * v.norm().max(1.0);
        for j in 0..self.ambient {
            for sign in [1.0, -1.0] {
                let mut probe = v.clone();
                probe[j] += sign * delta;
                if !self.contains(&probe)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Extreme rays of the dual cone, each of unit length. A line in the
    /// dual is reported as its two opposite rays.
    pub fn dual_rays(&self) -> Result<Vec<DVector<f64>>, ConeError> {
        Ok(self
            .dual_rays_bounded(usize::MAX)?
            .expect("unbounded enumeration completes"))
    }

    /// Like [`Cone::dual_rays`], but gives up with `None` once more than
    /// `max_rays` intermediate rays are alive.
    pub fn dual_rays_bounded(
        &self,
        max_rays: usize,
    ) -> Result<Option<Vec<DVector<f64>>>, ConeError> {
        let n = self.ambient;
        if n > MAX_DUAL_DIM {
            return Err(ConeError::TooLarge(n));
        }
        let mut dd = DoubleDescription::new(n, self.generators.len());
        for (i, g) in self.generators.iter().enumerate() {
            dd.add(i, g);
            if dd.rays.len() > max_rays {
                return Ok(None);
            }
        }
        Ok(Some(dd.into_rays()))
    }
}

fn normalized(sep: Separation, v: &DVector<f64>) -> Separation {
    let scale = sep.eta.amax();
    let eta = if scale > 0.0 {
        &sep.eta / scale
    } else {
        sep.eta
    };
    Separation {
        value: eta.dot(v),
        eta,
    }
}

const DD_TOL: f64 = 1e-10;

struct Ray {
    v: DVector<f64>,
    /// Bitset of processed constraints tight at this ray.
    tight: Vec<u64>,
}

impl Ray {
    fn set(&mut self, i: usize) {
        self.tight[i / 64] |= 1 << (i % 64);
    }
}

fn subset(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

fn intersect(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn count(a: &[u64]) -> usize {
    a.iter().map(|w| w.count_ones() as usize).sum()
}

/// Double description of `{η : ⟨η, g_i⟩ ≤ 0}` as lineality lines plus rays,
/// starting from all of `ℝⁿ`.
struct DoubleDescription {
    n: usize,
    words: usize,
    lines: Vec<DVector<f64>>,
    rays: Vec<Ray>,
}

impl DoubleDescription {
    fn new(n: usize, constraints: usize) -> Self {
        Self {
            n,
            words: constraints.div_ceil(64).max(1),
            lines: (0..n)
                .map(|j| DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }))
                .collect(),
            rays: Vec::new(),
        }
    }

    fn add(&mut self, index: usize, g: &DVector<f64>) {
        let pivot = self
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| (i, g.dot(l)))
            .filter(|(_, p)| p.abs() > DD_TOL)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        if let Some((li, p)) = pivot {
            let mut l = self.lines.swap_remove(li);
            let mut p = p;
            if p > 0.0 {
                l = -l;
                p = -p;
            }
            for other in &mut self.lines {
                let c = g.dot(other) / p;
                *other -= &l * c;
            }
            for r in &mut self.rays {
                let c = g.dot(&r.v) / p;
                r.v -= &l * c;
                let norm = r.v.norm();
                r.v /= norm;
                r.set(index);
            }
            // Every earlier constraint is tight on a lineality direction.
            let mut tight = vec![0u64; self.words];
            for j in 0..index {
                tight[j / 64] |= 1 << (j % 64);
            }
            let norm = l.norm();
            self.rays.push(Ray { v: l / norm, tight });
            return;
        }
        let vals: Vec<f64> = self.rays.iter().map(|r| g.dot(&r.v)).collect();
        let plus: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > DD_TOL).collect();
        let minus: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] < -DD_TOL).collect();
        if plus.is_empty() {
            for (r, &v) in self.rays.iter_mut().zip(&vals) {
                if v.abs() <= DD_TOL {
                    r.set(index);
                }
            }
            return;
        }
        // Pointed part has dimension n − lines; adjacent rays share at
        // least that minus two tight constraints.
        let need = (self.n - self.lines.len()).saturating_sub(2);
        let mut fresh = Vec::new();
        for &ip in &plus {
            for &im in &minus {
                let common = intersect(&self.rays[ip].tight, &self.rays[im].tight);
                if count(&common) < need {
                    continue;
                }
                let adjacent = self
                    .rays
                    .iter()
                    .enumerate()
                    .all(|(k, r)| k == ip || k == im || !subset(&common, &r.tight));
                if !adjacent {
                    continue;
                }
                let v = &self.rays[im].v * vals[ip] - &self.rays[ip].v * vals[im];
                let norm = v.norm();
                if norm <= DD_TOL {
                    continue;
                }
                let mut ray = Ray {
                    v: v / norm,
                    tight: common,
                };
                ray.set(index);
                fresh.push(ray);
            }
        }
        let mut kept: Vec<Ray> = Vec::with_capacity(self.rays.len() - plus.len() + fresh.len());
        for (mut r, v) in std::mem::take(&mut self.rays).into_iter().zip(vals) {
            if v > DD_TOL {
                continue;
            }
            if v.abs() <= DD_TOL {
                r.set(index);
            }
            kept.push(r);
        }
        kept.extend(fresh);
        self.rays = kept;
    }

    fn into_rays(self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = self.rays.into_iter().map(|r| r.v).collect();
        for l in self.lines {
            let norm = l.norm();
            out.push(&l / norm);
            out.push(-&l / norm);
        }
        out
    }
}
