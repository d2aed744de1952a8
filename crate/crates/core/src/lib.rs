//! Hospital patient-flow modelling: synthetic event logs, inflow forecasting,
//! LoS/CoT estimation, pathway clustering and discrete-event simulation.

pub mod domain;
pub mod engine;
pub mod estimators;
pub mod harness;
pub mod inflow;
pub mod linalg;
pub mod pathways;
pub mod presets;
pub mod rng;
pub mod synthehr;

use thiserror::Error;

/// Any failure of the library, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] domain::DomainError),
    #[error(transparent)]
    Synth(#[from] synthehr::SynthError),
    #[error(transparent)]
    Inflow(#[from] inflow::InflowError),
    #[error(transparent)]
    Estimator(#[from] estimators::EstimatorError),
    #[error(transparent)]
    Pathway(#[from] pathways::PathwayError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

/// Broad failure classes; the CLI maps them to exit codes 2, 3 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

fn inflow_class(e: &inflow::InflowError) -> ErrorClass {
    use inflow::InflowError as E;
    match e {
        E::InvalidParameter(_) => ErrorClass::Config,
        E::Linalg(_) => ErrorClass::Numeric,
        E::Model { source, .. } => inflow_class(source),
        _ => ErrorClass::Data,
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use estimators::EstimatorError as Est;
        match self {
            Error::Domain(_) | Error::Pathway(_) => ErrorClass::Data,
            Error::Synth(synthehr::SynthError::Io(_)) => ErrorClass::Config,
            Error::Synth(synthehr::SynthError::InvalidConfig(_)) => ErrorClass::Config,
            Error::Synth(_) => ErrorClass::Data,
            Error::Inflow(e) => inflow_class(e),
            Error::Estimator(Est::NewtonDivergence { .. } | Est::Linalg(_)) => ErrorClass::Numeric,
            Error::Estimator(Est::InvalidParameter(_)) => ErrorClass::Config,
            Error::Estimator(_) => ErrorClass::Data,
            Error::Engine(engine::EngineError::ForecastTooShort { .. }) => ErrorClass::Data,
            Error::Engine(_) => ErrorClass::Config,
            Error::Harness(harness::HarnessError::Stage { source, .. }) => source.class(),
            Error::Harness(_) => ErrorClass::Config,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}
