use std::fmt;

use extremalkit::cone::ConeError;
use extremalkit::flow::FlowError;
use extremalkit::pmp::PmpError;
use extremalkit::system::SystemError;
use extremalkit::variation::VariationError;

/// A failed command, tagged with its process exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad input: unreadable or malformed files, invalid problems or flags.
    Validation(String),
    /// The inputs were fine but the numerics broke down.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn system_is_numerical(e: &SystemError) -> bool {
    matches!(e, SystemError::Eval { .. })
}

fn flow_is_numerical(e: &FlowError) -> bool {
    match e {
        FlowError::System(s) => system_is_numerical(s),
        FlowError::BlowUp { .. } | FlowError::NonFinite { .. } => true,
        FlowError::OffGrid { .. }
        | FlowError::TimeOrder { .. }
        | FlowError::Dimension { .. }
        | FlowError::BadStep(_) => false,
    }
}

fn cone_is_numerical(e: &ConeError) -> bool {
    matches!(e, ConeError::Lp(_))
}

fn variation_is_numerical(e: &VariationError) -> bool {
    match e {
        VariationError::Flow(f) => flow_is_numerical(f),
        VariationError::System(s) => system_is_numerical(s),
        VariationError::Cone(c) => cone_is_numerical(c),
        _ => false,
    }
}

fn pmp_is_numerical(e: &PmpError) -> bool {
    match e {
        PmpError::Flow(f) => flow_is_numerical(f),
        PmpError::System(s) => system_is_numerical(s),
        PmpError::Variation(v) => variation_is_numerical(v),
        PmpError::Cone(c) => cone_is_numerical(c),
        PmpError::EmptyCone | PmpError::NewtonFailed { .. } | PmpError::Indefinite { .. } => true,
        _ => false,
    }
}

fn classify(numerical: bool, msg: String) -> CliError {
    if numerical {
        CliError::Numerical(msg)
    } else {
        CliError::Validation(msg)
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        classify(system_is_numerical(&e), e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        classify(flow_is_numerical(&e), e.to_string())
    }
}

impl From<ConeError> for CliError {
    fn from(e: ConeError) -> Self {
        classify(cone_is_numerical(&e), e.to_string())
    }
}

impl From<VariationError> for CliError {
    fn from(e: VariationError) -> Self {
        classify(variation_is_numerical(&e), e.to_string())
    }
}

impl From<PmpError> for CliError {
    fn from(e: PmpError) -> Self {
        classify(pmp_is_numerical(&e), e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(FlowError::BlowUp { t: 0.5 }).exit_code(), 3);
        assert_eq!(CliError::from(FlowError::OffGrid { t: 0.5 }).exit_code(), 2);
        assert_eq!(CliError::from(PmpError::LambdaSign(1.0)).exit_code(), 2);
        assert_eq!(
            CliError::from(PmpError::Indefinite { t: 0.0 }).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(VariationError::Flow(FlowError::NonFinite { t: 1.0 })).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(SystemError::UnknownProblem("x".into())).exit_code(),
            2
        );
    }
}
