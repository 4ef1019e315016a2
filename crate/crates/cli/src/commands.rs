use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use extremalkit::cone::Cone;
use extremalkit::flow::{
    extended_transport, integrate, transport, FlowConfig, Trajectory, TransportOperator,
};
use extremalkit::pmp::{
    check_multiplier, classify_cone, classify_extremal, integrate_normal_hamiltonian,
    recover_multiplier, CheckConfig, ClassificationFlags, ExtremalReport, Tolerances,
};
use extremalkit::sampling::{SamplerRegistry, SamplingConfig};
use extremalkit::system::{catalog, catalog_entries, ControlProblem};
use extremalkit::variation::{
    extended_vertical_cone, multi_needle_endpoint, variational_cone, vertical_cone, NeedleSpec,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::input::{
    check_len, initial_state, load_control, load_problem, parse_json, parse_vector,
};
use crate::{
    CatalogArgs, CheckMultiplierArgs, ClassifyArgs, ConeArgs, ConeKind, ExtremalArgs, Output,
    ReachArgs, RunArgs, SamplingArgs, SimulateArgs, TolArgs, TransportArgs,
};

/// Dual-ray enumeration gives up past this many live rays.
const MAX_LIVE_RAYS: usize = 4096;

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
}

/// Bulk data goes to `--out` when given, else to stdout; the summary takes
/// whichever stream is left.
fn emit(run: &RunArgs, data: String, summary: String) -> Result<Output, CliError> {
    match &run.out {
        Some(path) => {
            write_file(path, &data)?;
            Ok(Output {
                stdout: summary,
                stderr: String::new(),
            })
        }
        None => Ok(Output {
            stdout: data,
            stderr: summary,
        }),
    }
}

fn sampling_config(a: &SamplingArgs) -> Result<SamplingConfig, CliError> {
    SamplerRegistry::default()
        .get(&a.sampler)
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(SamplingConfig {
        time_samples: a.time_samples,
        fiber_samples: a.fiber_samples,
        seed: a.seed,
        sampler: a.sampler.clone(),
        tangents: !a.no_tangents,
    })
}

fn tolerances(a: &TolArgs) -> Tolerances {
    let d = Tolerances::default();
    Tolerances {
        stationarity: a.tol_stationarity.unwrap_or(d.stationarity),
        adjoint: a.tol_adjoint.unwrap_or(d.adjoint),
        maximization: a.tol_maximization.unwrap_or(d.maximization),
        cone: a.tol_cone.unwrap_or(d.cone),
    }
}

fn vec_json(v: &DVector<f64>) -> Vec<f64> {
    // `+ 0.0` turns −0 into 0 so reports do not print "-0.0".
    v.iter().map(|x| x + 0.0).collect()
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn flags_line(f: &ClassificationFlags) -> String {
    format!(
        "extremal: {}, normal: {}, abnormal: {}, strictly_abnormal: {}",
        f.is_extremal, f.is_normal, f.is_abnormal, f.is_strictly_abnormal
    )
}

/// Problem, control and reference trajectory.
fn reference(
    run: &RunArgs,
    control: &str,
) -> Result<(ControlProblem, DVector<f64>, Trajectory), CliError> {
    let problem = load_problem(&run.problem)?;
    let control = load_control(&problem, control)?;
    let x0 = initial_state(&problem, run.x0.as_deref())?;
    let traj = integrate(&problem, &control, &x0, FlowConfig::with_steps(run.steps))?;
    Ok((problem, x0, traj))
}

pub fn cmd_catalog(args: &CatalogArgs) -> Result<Output, CliError> {
    if let Some(name) = &args.name {
        let problem = catalog(name)?;
        return Ok(Output {
            stdout: to_json(problem.def()),
            stderr: String::new(),
        });
    }
    let mut stdout = String::new();
    if args.json {
        let list: Vec<_> = catalog_entries()
            .iter()
            .map(|e| {
                let def = (e.build)();
                json!({
                    "name": e.name,
                    "state_dim": def.state_dim,
                    "control_dim": def.control_dim,
                    "horizon": def.horizon,
                    "summary": e.summary,
                })
            })
            .collect();
        stdout = to_json(&list);
    } else {
        let width = catalog_entries()
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(0);
        for e in catalog_entries() {
            let def = (e.build)();
            let _ = writeln!(
                stdout,
                "{:<width$}  d={} k={}  {}",
                e.name, def.state_dim, def.control_dim, e.summary
            );
        }
    }
    Ok(Output {
        stdout,
        stderr: String::new(),
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Output, CliError> {
    let (_, _, traj) = reference(&args.run, &args.control)?;
    let summary = if args.run.json {
        to_json(&json!({
            "steps": traj.steps(),
            "final_time": traj.times().last(),
            "final_state": vec_json(traj.final_state()),
            "final_cost": traj.final_cost(),
        }))
    } else {
        format!(
            "{} steps; x(b) = {}, J = {:.16e}\n",
            traj.steps(),
            fmt_vec(traj.final_state()),
            traj.final_cost()
        )
    };
    emit(&args.run, traj.to_csv(), summary)
}

fn operator_json(op: &TransportOperator) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = op
        .matrix
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    json!({ "t0": op.t0, "t1": op.t1, "extended": op.extended, "matrix": rows })
}

pub fn cmd_transport(args: &TransportArgs) -> Result<Output, CliError> {
    let (problem, _, traj) = reference(&args.run, &args.control)?;
    let (a, b) = problem.horizon();
    let (t0, t1) = (args.from.unwrap_or(a), args.to.unwrap_or(b));
    let op = if args.extended {
        extended_transport(&problem, &traj, t0, t1)?
    } else {
        transport(&problem, &traj, t0, t1)?
    };
    let text = if args.run.json || args.run.out.is_some() {
        to_json(&operator_json(&op))
    } else {
        let mut s = String::new();
        for row in op.matrix.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    };
    emit(
        &args.run,
        text,
        format!("transport from t = {t0} to t = {t1}\n"),
    )
}

fn read_generators(path: &Path) -> Result<Cone, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let gens: Vec<Vec<f64>> = parse_json(&text, &path.display().to_string())?;
    let n = gens
        .first()
        .map(Vec::len)
        .ok_or_else(|| CliError::validation("generator list is empty"))?;
    if n == 0 {
        return Err(CliError::validation("generators must have positive length"));
    }
    if let Some(bad) = gens.iter().position(|g| g.len() != n) {
        return Err(CliError::validation(format!(
            "generator {bad} has length {}, expected {n}",
            gens[bad].len()
        )));
    }
    Ok(Cone::new(
        n,
        gens.into_iter().map(DVector::from_vec).collect(),
    )?)
}

pub fn cmd_cone(args: &ConeArgs) -> Result<Output, CliError> {
    let tol = args.tol_cone.unwrap_or(Tolerances::default().cone);
    let (cone, cost_last) = match (&args.generators, &args.problem, &args.control) {
        (Some(path), _, _) => (read_generators(path)?, true),
        (None, Some(problem), Some(control)) => {
            let run = RunArgs {
                problem: problem.clone(),
                x0: args.x0.clone(),
                steps: args.steps,
                out: None,
                json: false,
            };
            let (problem, _, traj) = reference(&run, control)?;
            let cfg = sampling_config(&args.sampling)?;
            match args.kind {
                ConeKind::Extended => (extended_vertical_cone(&problem, &traj, &cfg)?, true),
                ConeKind::Vertical => (vertical_cone(&problem, &traj, &cfg)?, false),
                ConeKind::Variational => (variational_cone(&problem, &traj, &cfg)?, false),
            }
        }
        _ => {
            return Err(CliError::validation(
                "cone needs --generators, or --problem with --control",
            ))
        }
    };
    let flags = if cost_last && cone.ambient_dim() >= 2 {
        Some(classify_cone(&cone, tol)?)
    } else {
        None
    };
    let rays = cone.dual_rays_bounded(MAX_LIVE_RAYS)?;
    let summary = format!(
        "{} generators in R^{}, dimension {}, {}{}\n",
        cone.generators().len(),
        cone.ambient_dim(),
        cone.dimension(),
        rays.as_ref()
            .map_or("dual rays skipped".to_string(), |r| format!(
                "{} dual rays",
                r.len()
            )),
        flags.map_or(String::new(), |f| format!("; {}", flags_line(&f)))
    );
    let report = json!({
        "ambient_dim": cone.ambient_dim(),
        "generators": cone.generators().iter().map(vec_json).collect::<Vec<_>>(),
        "dropped_zero_generators": cone.dropped_zero(),
        "dimension": cone.dimension(),
        "flags": flags,
        "dual_rays": rays.map(|r| r.iter().map(vec_json).collect::<Vec<_>>()),
    });
    finish_report(args.json, args.out.as_deref(), to_json(&report), summary)
}

/// Reports: JSON to `--out` and/or stdout with `--json`, summary otherwise.
fn finish_report(
    json: bool,
    out: Option<&Path>,
    report: String,
    summary: String,
) -> Result<Output, CliError> {
    if let Some(path) = out {
        write_file(path, &report)?;
    }
    Ok(if json {
        Output {
            stdout: report,
            stderr: summary,
        }
    } else {
        Output {
            stdout: summary,
            stderr: String::new(),
        }
    })
}

/// The report JSON for `args`; byte-identical across runs with equal inputs.
pub fn classify_report(args: &ClassifyArgs) -> Result<ExtremalReport, CliError> {
    let (problem, _, traj) = reference(&args.run, &args.control)?;
    let cfg = sampling_config(&args.sampling)?;
    Ok(classify_extremal(
        &problem,
        &traj,
        &cfg,
        &tolerances(&args.tol),
    )?)
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<Output, CliError> {
    let report = classify_report(args)?;
    let verified = report.diagnostics.verified_witnesses;
    let summary = format!(
        "{} ({verified} verified witnesses)\n",
        flags_line(&report.flags)
    );
    finish_report(
        args.run.json,
        args.run.out.as_deref(),
        to_json(&report),
        summary,
    )
}

fn check_config(s: &SamplingArgs, t: &TolArgs) -> CheckConfig {
    CheckConfig {
        fiber_samples: s.fiber_samples,
        seed: s.seed,
        tol: tolerances(t),
    }
}

pub fn cmd_check_multiplier(args: &CheckMultiplierArgs) -> Result<Output, CliError> {
    let (problem, _, traj) = reference(&args.run, &args.control)?;
    let eta_b = DVector::from_vec(parse_vector(&args.eta_b, "--eta-b")?);
    check_len(&eta_b, problem.state_dim(), "--eta-b")?;
    if !args.lambda.is_finite() {
        return Err(CliError::validation("--lambda must be finite"));
    }
    let mult = recover_multiplier(&problem, &traj, &eta_b, args.lambda)?;
    let check = check_multiplier(
        &problem,
        &traj,
        &mult,
        &check_config(&args.sampling, &args.tol),
    )?;
    let summary = format!(
        "passed: {} (adjoint {:.3e}, stationarity {:.3e}, maximization {:.3e}, drift {:.3e})\n",
        check.passed,
        check.adjoint,
        check.stationarity,
        check.maximization,
        check.hamiltonian_drift
    );
    let report = json!({
        "eta_b": vec_json(&eta_b),
        "lambda": args.lambda,
        "eta_a": vec_json(&mult.eta[0]),
        "residuals": check,
    });
    finish_report(
        args.run.json,
        args.run.out.as_deref(),
        to_json(&report),
        summary,
    )
}

pub fn cmd_extremal(args: &ExtremalArgs) -> Result<Output, CliError> {
    let problem = load_problem(&args.run.problem)?;
    let x0 = initial_state(&problem, args.run.x0.as_deref())?;
    let p0 = DVector::from_vec(parse_vector(&args.p0, "--p0")?);
    check_len(&p0, problem.state_dim(), "--p0")?;
    let (traj, mult) = integrate_normal_hamiltonian(
        &problem,
        &x0,
        &p0,
        args.lambda,
        FlowConfig::with_steps(args.run.steps),
    )?;
    let check = check_multiplier(
        &problem,
        &traj,
        &mult,
        &check_config(&args.sampling, &args.tol),
    )?;
    let p_b = mult.eta.last().expect("nonempty path");
    let summary = if args.run.json {
        to_json(&json!({
            "final_state": vec_json(traj.final_state()),
            "final_costate": vec_json(p_b),
            "final_cost": traj.final_cost(),
            "lambda": mult.lambda,
            "residuals": check,
        }))
    } else {
        format!(
            "x(b) = {}, p(b) = {}, J = {:.16e}, hamiltonian drift {:.3e}\n",
            fmt_vec(traj.final_state()),
            fmt_vec(p_b),
            traj.final_cost(),
            check.hamiltonian_drift
        )
    };
    emit(&args.run, traj.to_csv(), summary)
}

/// A random needle set at sorted, distinct grid nodes in `(a, b]`.
fn random_needles(
    problem: &ControlProblem,
    traj: &Trajectory,
    cfg: &SamplingConfig,
    max_needles: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NeedleSpec>, CliError> {
    let (a, _) = problem.horizon();
    let law = traj
        .control_law()
        .expect("integrated trajectories keep their control law");
    let registry = SamplerRegistry::default();
    let sampler = registry
        .get(&cfg.sampler)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let count = rng.random_range(1..=max_needles);
    let times = traj.times();
    let mut taus: Vec<f64> = (0..count)
        .map(|_| times[rng.random_range(1..times.len())])
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut out = Vec::with_capacity(taus.len());
    let mut previous = a;
    for tau in taus {
        let weight = 1.0 - rng.random::<f64>();
        // Reverse legs must fit inside the reference span before them.
        if rng.random::<f64>() < 0.25 && tau - previous > 2.0 * eps * weight {
            out.push(NeedleSpec::reverse(tau, weight));
        } else {
            let u = law.value(tau)?;
            let alts = sampler.sample(problem.fiber(), &u, 8, rng);
            let alt = &alts[rng.random_range(0..alts.len())];
            out.push(NeedleSpec::alt(tau, alt.as_slice(), weight));
        }
        previous = tau;
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReachStats {
    eps: f64,
    /// `max over samples and unit dual rays η of ⟨η, Δ⟩ / eps`.
    max_pairing_over_eps: Option<f64>,
    max_displacement: f64,
}

fn pairing(rays: &[DVector<f64>], delta: &DVector<f64>) -> Option<f64> {
    rays.iter()
        .map(|r| r.dot(delta) / r.norm())
        .reduce(f64::max)
}

pub fn cmd_reach(args: &ReachArgs) -> Result<Output, CliError> {
    let (problem, x0, traj) = reference(&args.run, &args.control)?;
    let cfg = sampling_config(&args.sampling)?;
    let d = problem.state_dim();
    // State projection of the variational cone: needles may change the duration.
    let full = variational_cone(&problem, &traj, &cfg)?;
    let state = Cone::new(
        d,
        full.generators()
            .iter()
            .map(|g| g.rows(1, d).into_owned())
            .collect(),
    )?;
    let rays = state.dual_rays_bounded(MAX_LIVE_RAYS)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0001);
    let y = traj.final_state().clone();
    let mut csv = String::from("sample");
    for i in 1..=d {
        let _ = write!(csv, ",x{i}");
    }
    csv.push_str(",J\n");
    let mut stats = [(args.eps, None::<f64>, 0.0f64), (args.eps / 2.0, None, 0.0)];
    for s in 0..args.samples {
        let needles = random_needles(&problem, &traj, &cfg, args.needles, args.eps, &mut rng)?;
        for (k, (eps, best, disp)) in stats.iter_mut().enumerate() {
            let (end, cost) = multi_needle_endpoint(&problem, &x0, &traj, &needles, *eps)?;
            let delta = &end - &y;
            *disp = disp.max(delta.amax());
            if let (Some(rays), true) = (&rays, *eps > 0.0) {
                if let Some(p) = pairing(rays, &delta) {
                    let p = p / *eps;
                    *best = Some(best.map_or(p, |b: f64| b.max(p)));
                }
            }
            if k == 0 {
                let _ = write!(csv, "{s}");
                for v in end.iter() {
                    let _ = write!(csv, ",{v:.16e}");
                }
                let _ = writeln!(csv, ",{cost:.16e}");
            }
        }
    }
    let report: Vec<ReachStats> = stats
        .iter()
        .map(|&(eps, best, disp)| ReachStats {
            eps,
            max_pairing_over_eps: best,
            max_displacement: disp,
        })
        .collect();
    // First-order consistency: the excess pairing shrinks with eps.
    let consistent = match (
        report[0].max_pairing_over_eps,
        report[1].max_pairing_over_eps,
    ) {
        (Some(full), Some(half)) => full <= 1e-12 || half <= 0.75 * full,
        _ => true,
    };
    let fitted_c = report[0]
        .max_pairing_over_eps
        .filter(|_| args.eps > 0.0)
        .map(|p| p.max(0.0) / args.eps);
    let json_report = json!({
        "samples": args.samples,
        "reference_endpoint": vec_json(&y),
        "dual_rays": rays.as_ref().map(|r| r.iter().map(vec_json).collect::<Vec<_>>()),
        "runs": report,
        "fitted_c": fitted_c,
        "first_order_consistent": consistent,
        "sampling": cfg,
    });
    let summary =
        if args.run.json {
            to_json(&json_report)
        } else {
            format!(
            "{} samples; max pairing/eps {} at eps = {}, {} at eps/2; consistent: {consistent}\n",
            args.samples,
            report[0].max_pairing_over_eps.map_or("n/a".into(), |v| format!("{v:.3e}")),
            args.eps,
            report[1].max_pairing_over_eps.map_or("n/a".into(), |v| format!("{v:.3e}")),
        )
        };
    emit(&args.run, csv, summary)
}
