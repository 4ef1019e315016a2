use nalgebra::DVector;
use serde::Serialize;

use super::check::{check_with, search_region, Probes};
use super::{recover_multiplier, CheckConfig, MultiplierCheck, PmpError, Tolerances};
use crate::cone::{Cone, MAX_DUAL_DIM};
use crate::flow::Trajectory;
use crate::sampling::SamplingConfig;
use crate::system::ControlProblem;
use crate::variation::extended_vertical_cone;

/// Dual rays beyond this many are not turned into witnesses.
const MAX_RAY_WITNESSES: usize = 32;
/// Double description is abandoned past this many live rays.
const MAX_LIVE_RAYS: usize = 4096;

pub const SAMPLING_NOTE: &str = "classification is relative to the sampled cone: \
\"not extremal\" is certified by an interior point, while \"extremal\" may be overturned by denser sampling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassificationFlags {
    pub is_extremal: bool,
    pub is_normal: bool,
    pub is_abnormal: bool,
    pub is_strictly_abnormal: bool,
}

/// One dual element `(η_b, λ)` with the residuals of its recovered multiplier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub eta_b: Vec<f64>,
    pub lambda: f64,
    /// `dual_ray`, `normal_lp` or `abnormal_lp`.
    pub source: &'static str,
    pub residuals: MultiplierCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiagnostics {
    pub max_stationarity: f64,
    pub max_maximization_violation: f64,
    pub max_hamiltonian_drift: f64,
    pub verified_witnesses: usize,
    /// `max −λ` over the dual cone intersected with the unit box.
    pub normal_lp_value: f64,
    pub boundary_within_tolerance: bool,
    /// `−e_J` lies in the closed cone but not in its interior.
    pub minus_e_j_on_boundary: bool,
    pub generators: usize,
    pub dropped_zero_generators: usize,
    pub extended_cone_dimension: usize,
    pub state_cone_dimension: usize,
    /// `complete` or `skipped`.
    pub dual_ray_enumeration: &'static str,
    pub dual_rays: usize,
    pub positive_lambda_rays_discarded: usize,
    pub maximization_search_region: String,
    pub note: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingEcho {
    #[serde(flatten)]
    pub config: SamplingConfig,
    pub steps: usize,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalReport {
    pub flags: ClassificationFlags,
    pub witnesses: Vec<Witness>,
    pub diagnostics: ReportDiagnostics,
    pub sampling: SamplingEcho,
}

/// Geometry of an extended cone in `ℝ^{d+1}` relative to `−e_J`.
struct Verdict {
    flags: ClassificationFlags,
    normal: Option<DVector<f64>>,
    abnormal: Option<DVector<f64>>,
    normal_value: f64,
    boundary: bool,
    on_boundary: bool,
    state_dim: usize,
}

fn verdict(cone: &Cone, tol: f64) -> Result<Verdict, PmpError> {
    let n = cone.ambient_dim();
    let d = n - 1;
    let mut minus_ej = DVector::zeros(n);
    minus_ej[d] = -1.0;

    let interior = cone.in_interior(&minus_ej)?;
    let contained = cone.contains(&minus_ej)?;
    let sep = cone.separating_covector(Some(&minus_ej))?;
    let normal_value = sep.as_ref().map_or(0.0, |s| s.value);
    let is_normal = normal_value > tol;

    let state = Cone::new(
        d,
        cone.generators()
            .iter()
            .map(|g| g.rows(0, d).into_owned())
            .collect(),
    )?;
    let abnormal = state.separating_covector(None)?.map(|s| {
        let mut eta = DVector::zeros(n);
        eta.rows_mut(0, d).copy_from(&s.eta);
        eta
    });
    let is_abnormal = abnormal.is_some();
    let is_extremal = !interior || is_normal || is_abnormal;
    Ok(Verdict {
        flags: ClassificationFlags {
            is_extremal,
            is_normal,
            is_abnormal,
            is_strictly_abnormal: is_abnormal && !is_normal,
        },
        normal: if is_normal { sep.map(|s| s.eta) } else { None },
        abnormal,
        normal_value,
        boundary: normal_value >= tol / 1000.0 && normal_value <= tol * 1000.0,
        on_boundary: contained && !interior,
        state_dim: state.dimension(),
    })
}

/// Classify an extended cone given directly; the last axis is the cost.
///
/// The zero cone counts as extremal, normal and abnormal.
pub fn classify_cone(cone: &Cone, tol: f64) -> Result<ClassificationFlags, PmpError> {
    if cone.ambient_dim() < 2 {
        return Err(PmpError::Dimension {
            expected: 2,
            found: cone.ambient_dim(),
        });
    }
    Ok(verdict(cone, tol)?.flags)
}

/// Scale so that `‖(η_b, λ)‖∞ = 1`.
fn unit(v: &DVector<f64>) -> DVector<f64> {
    let m = v.amax();
    if m > 0.0 {
        v / m
    } else {
        v.clone()
    }
}

/// Sample the extended vertical cone along `traj`, decide the four flags
/// and re-verify every witness as a multiplier.
pub fn classify_extremal(
    problem: &ControlProblem,
    traj: &Trajectory,
    sampling: &SamplingConfig,
    tol: &Tolerances,
) -> Result<ExtremalReport, PmpError> {
    let d = problem.state_dim();
    if d + 1 > MAX_DUAL_DIM {
        return Err(PmpError::TooLarge(d + 1));
    }
    let cone = extended_vertical_cone(problem, traj, sampling)?;
    if cone.is_empty() {
        return Err(PmpError::EmptyCone);
    }
    let v = verdict(&cone, tol.cone)?;

    let mut candidates: Vec<(DVector<f64>, &'static str)> = Vec::new();
    let (enumeration, rays) = match cone.dual_rays_bounded(MAX_LIVE_RAYS)? {
        Some(rays) => ("complete", rays),
        None => ("skipped", Vec::new()),
    };
    let mut discarded = 0;
    for r in &rays {
        if r[d] > tol.cone {
            discarded += 1;
        } else if candidates.len() < MAX_RAY_WITNESSES {
            candidates.push((unit(r), "dual_ray"));
        }
    }
    if let Some(eta) = &v.normal {
        candidates.push((unit(eta), "normal_lp"));
    }
    if let Some(eta) = &v.abnormal {
        candidates.push((unit(eta), "abnormal_lp"));
    }
    let mut unique: Vec<(DVector<f64>, &'static str)> = Vec::new();
    for (c, source) in candidates {
        if !unique.iter().any(|(u, _)| (u - &c).amax() < 1e-9) {
            unique.push((c, source));
        }
    }

    let check = CheckConfig {
        fiber_samples: sampling.fiber_samples,
        seed: sampling.seed,
        tol: *tol,
    };
    let probes = Probes::new(problem, traj, check.fiber_samples, check.seed)?;
    let mut witnesses = Vec::with_capacity(unique.len());
    for (w, source) in unique {
        let eta_b = w.rows(0, d).into_owned();
        let lambda = w[d];
        let mult = recover_multiplier(problem, traj, &eta_b, lambda)?;
        let residuals = check_with(problem, traj, &mult, &probes, tol)?;
        witnesses.push(Witness {
            eta_b: eta_b.iter().copied().collect(),
            lambda,
            source,
            residuals,
        });
    }

    let fold = |f: fn(&MultiplierCheck) -> f64| {
        witnesses
            .iter()
            .map(|w| f(&w.residuals))
            .fold(0.0, f64::max)
    };
    let diagnostics = ReportDiagnostics {
        max_stationarity: fold(|r| r.stationarity),
        max_maximization_violation: fold(|r| r.maximization),
        max_hamiltonian_drift: fold(|r| r.hamiltonian_drift),
        verified_witnesses: witnesses.iter().filter(|w| w.residuals.passed).count(),
        normal_lp_value: v.normal_value,
        boundary_within_tolerance: v.boundary,
        minus_e_j_on_boundary: v.on_boundary,
        generators: cone.generators().len(),
        dropped_zero_generators: cone.dropped_zero(),
        extended_cone_dimension: cone.dimension(),
        state_cone_dimension: v.state_dim,
        dual_ray_enumeration: enumeration,
        dual_rays: rays.len(),
        positive_lambda_rays_discarded: discarded,
        maximization_search_region: search_region(problem.fiber()),
        note: SAMPLING_NOTE,
    };
    Ok(ExtremalReport {
        flags: v.flags,
        witnesses,
        diagnostics,
        sampling: SamplingEcho {
            config: sampling.clone(),
            steps: traj.steps(),
            tolerances: *tol,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, FlowConfig};
    use crate::system::{catalog, PiecewiseControl};

    fn flags(e: bool, n: bool, a: bool, s: bool) -> ClassificationFlags {
        ClassificationFlags {
            is_extremal: e,
            is_normal: n,
            is_abnormal: a,
            is_strictly_abnormal: s,
        }
    }

    fn synthetic(n: usize, gens: &[&[f64]]) -> ClassificationFlags {
        classify_cone(&Cone::from_slices(n, gens).unwrap(), 1e-9).unwrap()
    }

    #[test]
    fn hand_computed_cones() {
        assert_eq!(
            synthetic(2, &[&[1.0, 0.0], &[-1.0, 0.0]]),
            flags(true, true, false, false)
        );
        assert_eq!(
            synthetic(2, &[&[1.0, 0.0], &[0.0, 1.0]]),
            flags(true, true, true, false)
        );
        assert_eq!(
            synthetic(2, &[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]),
            flags(true, false, true, true)
        );
        assert_eq!(
            synthetic(3, &[&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]]),
            flags(true, false, true, true)
        );
        assert_eq!(synthetic(2, &[&[1.0, 1.0]]), flags(true, true, true, false));
        assert_eq!(synthetic(3, &[]), flags(true, true, true, false));
        let full: Vec<Vec<f64>> = (0..3)
            .flat_map(|i| {
                [1.0, -1.0].map(|s| (0..3).map(|j| if i == j { s } else { 0.0 }).collect())
            })
            .collect();
        let refs: Vec<&[f64]> = full.iter().map(|g| g.as_slice()).collect();
        assert_eq!(synthetic(3, &refs), flags(false, false, false, false));
    }

    fn small() -> SamplingConfig {
        SamplingConfig {
            time_samples: 16,
            fiber_samples: 16,
            seed: 1,
            ..SamplingConfig::default()
        }
    }

    #[test]
    fn lqr_is_normal() {
        let p = catalog("lqr1d").unwrap();
        let c = PiecewiseControl::constant(&p, &[1.0]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(1), FlowConfig::with_steps(200)).unwrap();
        let r = classify_extremal(&p, &tr, &small(), &Tolerances::default()).unwrap();
        assert_eq!(r.flags, flags(true, true, false, false));
        let w = r
            .witnesses
            .iter()
            .find(|w| w.residuals.passed)
            .expect("verified witness");
        assert!(w.lambda < 0.0);
        assert!(
            (w.eta_b[0] + w.lambda).abs() < 1e-12,
            "η_b = −λ on the LQR extremal"
        );
        assert!(r.witnesses.iter().all(|w| w.lambda <= 1e-9));
    }

    #[test]
    fn martinet_line_is_abnormal_and_normal() {
        let p = catalog("martinet").unwrap();
        let c = PiecewiseControl::constant(&p, &[1.0, 0.0]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(3), FlowConfig::with_steps(200)).unwrap();
        let r = classify_extremal(&p, &tr, &small(), &Tolerances::default()).unwrap();
        assert_eq!(r.flags, flags(true, true, true, false));
        assert_eq!(r.diagnostics.state_cone_dimension, 2);
        // The LP covector may coincide with a dual ray and be deduplicated away.
        let abnormal = r
            .witnesses
            .iter()
            .find(|w| w.lambda == 0.0 && w.eta_b[0].abs() < 1e-12 && w.eta_b[1].abs() < 1e-12)
            .expect("abnormal witness");
        assert_eq!(abnormal.eta_b[2].abs(), 1.0);
        assert!(abnormal.residuals.passed, "{:?}", abnormal.residuals);
    }

    #[test]
    fn non_extremal_control_is_certified() {
        // u = u1 with a kink is not optimal for any cost-weighted endpoint problem.
        let p = catalog("lqr1d").unwrap();
        let c = PiecewiseControl::formulas(&p, &["2*t"]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(1), FlowConfig::with_steps(200)).unwrap();
        let r = classify_extremal(&p, &tr, &small(), &Tolerances::default()).unwrap();
        assert!(!r.flags.is_extremal, "{:?}", r.flags);
        assert!(!r.flags.is_normal && !r.flags.is_abnormal);
    }

    #[test]
    fn reports_are_deterministic() {
        let p = catalog("heisenberg").unwrap();
        let c = PiecewiseControl::formulas(&p, &["cos(t)", "sin(t)"]).unwrap();
        let tr = integrate(&p, &c, &DVector::zeros(3), FlowConfig::with_steps(100)).unwrap();
        let a = classify_extremal(&p, &tr, &small(), &Tolerances::default()).unwrap();
        let b = classify_extremal(&p, &tr, &small(), &Tolerances::default()).unwrap();
        assert_eq!(a, b);
        let f = a.flags;
        assert!(!f.is_strictly_abnormal || (f.is_abnormal && !f.is_normal));
        assert!(!(f.is_normal || f.is_abnormal) || f.is_extremal);
    }
}
