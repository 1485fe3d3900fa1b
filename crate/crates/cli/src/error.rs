//! Errors carrying the process exit code.

use std::fmt;

use ziacd::distributions::DistError;
use ziacd::estimation::EstimationError;
use ziacd::evaluation::EvalError;
use ziacd::gas::GasError;
use ziacd::pipeline::PipelineError;
use ziacd::simulation::SimError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NON_CONVERGENCE: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn non_convergence(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NON_CONVERGENCE,
            message: message.into(),
        }
    }

    fn with_code(code: u8, e: impl fmt::Display) -> Self {
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::with_code(EXIT_CONFIG, e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::with_code(EXIT_CONFIG, e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::with_code(EXIT_DATA, e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::EmptyInput
            | PipelineError::Parse { .. }
            | PipelineError::EmptyAfterCleaning { .. }
            | PipelineError::TooFewTicks(_) => EXIT_DATA,
            PipelineError::MissingColumn(_)
            | PipelineError::Io(_)
            | PipelineError::AlreadyTreated(_)
            | PipelineError::InvalidEps(_) => EXIT_CONFIG,
        };
        Self::with_code(code, e)
    }
}

fn dist_code(e: &DistError) -> u8 {
    match e {
        DistError::OutsideSupport(_) => EXIT_DATA,
        _ => EXIT_CONFIG,
    }
}

fn gas_code(e: &GasError) -> u8 {
    match e {
        GasError::Distribution(d) => dist_code(d),
        GasError::FisherUnderflow { .. } | GasError::UnitRoot => EXIT_NON_CONVERGENCE,
        GasError::FilterDiverged { .. }
        | GasError::IncompatibleObservations { .. }
        | GasError::Empty => EXIT_DATA,
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        let code = match &e {
            EstimationError::TooFewObservations { .. } | EstimationError::DegenerateData(_) => {
                EXIT_DATA
            }
            EstimationError::NonConvergence(_) | EstimationError::HessianNotPD => {
                EXIT_NON_CONVERGENCE
            }
            EstimationError::BoxDegenerate { .. } | EstimationError::InitMismatch { .. } => {
                EXIT_CONFIG
            }
            EstimationError::Gas(g) => gas_code(g),
            EstimationError::Distribution(d) => dist_code(d),
        };
        Self::with_code(code, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::NotConverged => EXIT_NON_CONVERGENCE,
            EvalError::LengthMismatch(..) | EvalError::NotContinuous => EXIT_CONFIG,
            EvalError::EmptyOutOfSample | EvalError::TooFewPairs(_) | EvalError::ZeroVariance => {
                EXIT_DATA
            }
            EvalError::Gas(g) => gas_code(g),
            EvalError::Distribution(d) => dist_code(d),
        };
        Self::with_code(code, e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::InvalidDesign(_) | SimError::Io(_) => EXIT_CONFIG,
            SimError::Diverged { .. } => EXIT_DATA,
            SimError::Gas(g) => gas_code(g),
            SimError::Distribution(d) => dist_code(d),
            SimError::Estimation(inner) => return inner.clone().into(),
        };
        Self::with_code(code, e)
    }
}
