use super::{ControlProblem, Fiber, ProblemDef, SystemError};

/// A named benchmark problem.
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub build: fn() -> ProblemDef,
}

fn def(
    name: &str,
    d: usize,
    k: usize,
    dynamics: &[&str],
    cost: &str,
    endpoints: Option<(&[f64], &[f64])>,
) -> ProblemDef {
    ProblemDef {
        name: Some(name.to_string()),
        state_dim: d,
        control_dim: k,
        horizon: [0.0, 1.0],
        dynamics: dynamics.iter().map(|s| s.to_string()).collect(),
        cost: cost.to_string(),
        fiber: Fiber::Unconstrained,
        x_a: endpoints.map(|(a, _)| a.to_vec()),
        x_b: endpoints.map(|(_, b)| b.to_vec()),
    }
}

const ENTRIES: &[CatalogEntry] = &[
    CatalogEntry {
        name: "lqr1d",
        summary: "x' = u, L = u^2/2, steer 0 to 1",
        build: || def("lqr1d", 1, 1, &["u1"], "0.5*u1^2", Some((&[0.0], &[1.0]))),
    },
    CatalogEntry {
        name: "double_integrator",
        summary: "x1' = x2, x2' = u, L = u^2/2",
        build: || def("double_integrator", 2, 1, &["x2", "u1"], "0.5*u1^2", None),
    },
    CatalogEntry {
        name: "heisenberg",
        summary: "nonholonomic integrator, L = |u|^2/2",
        build: || {
            def(
                "heisenberg",
                3,
                2,
                &["u1", "u2", "0.5*(x1*u2 - x2*u1)"],
                "0.5*(u1^2 + u2^2)",
                None,
            )
        },
    },
    CatalogEntry {
        name: "martinet",
        summary: "Martinet distribution, abnormal along x2 = 0",
        build: || {
            def(
                "martinet",
                3,
                2,
                &["u1", "u2", "0.5*x2^2*u1"],
                "0.5*(u1^2 + u2^2)",
                None,
            )
        },
    },
];

pub fn catalog_entries() -> &'static [CatalogEntry] {
    ENTRIES
}

/// Build the named benchmark problem.
pub fn catalog(name: &str) -> Result<ControlProblem, SystemError> {
    let entry = ENTRIES
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| SystemError::UnknownProblem(name.to_string()))?;
    ControlProblem::new((entry.build)())
}
