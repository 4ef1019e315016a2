use std::fs;
use std::path::Path;

use extremalkit::system::{
    catalog, catalog_entries, validate, ControlDef, ControlProblem, PiecewiseControl, ProblemDef,
};
use nalgebra::DVector;
use serde::de::DeserializeOwned;

use crate::error::CliError;

/// Byte offset of serde_json's 1-based (line, column) in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let prefix: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (prefix + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        CliError::validation(format!(
            "malformed JSON in {origin} at line {}, column {} (offset {offset}): {e}",
            e.line(),
            e.column()
        ))
    })
}

fn read(path: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {path}: {e}")))
}

/// `spec` is a path to a problem JSON file or, when no such file exists, a
/// catalog name.
pub fn load_problem(spec: &str) -> Result<ControlProblem, CliError> {
    if !Path::new(spec).exists() && catalog_entries().iter().any(|e| e.name == spec) {
        return Ok(catalog(spec)?);
    }
    let def: ProblemDef = parse_json(&read(spec)?, spec)?;
    let diags = validate(&def);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(CliError::validation(format!(
            "{spec}: {}",
            lines.join("; ")
        )));
    }
    Ok(ControlProblem::new(def)?)
}

/// `spec` is a control JSON file or an inline JSON object.
pub fn load_control(problem: &ControlProblem, spec: &str) -> Result<PiecewiseControl, CliError> {
    let (text, origin) = if spec.trim_start().starts_with('{') {
        (spec.to_string(), "inline control")
    } else {
        (read(spec)?, spec)
    };
    let def: ControlDef = parse_json(&text, origin)?;
    Ok(PiecewiseControl::from_def(problem, &def)?)
}

/// Comma-separated numbers.
pub fn parse_vector(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::validation(format!("{what}: `{p}` is not a finite number"))
                })
        })
        .collect()
}

/// `--x0` if given, else the problem's `x_a`, else the origin.
pub fn initial_state(problem: &ControlProblem, x0: Option<&str>) -> Result<DVector<f64>, CliError> {
    let d = problem.state_dim();
    let x = match x0 {
        Some(s) => DVector::from_vec(parse_vector(s, "--x0")?),
        None => problem.x_a().unwrap_or_else(|| DVector::zeros(d)),
    };
    check_len(&x, d, "--x0")?;
    Ok(x)
}

pub fn check_len(v: &DVector<f64>, expected: usize, what: &str) -> Result<(), CliError> {
    if v.len() != expected {
        return Err(CliError::validation(format!(
            "{what} has length {}, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}
