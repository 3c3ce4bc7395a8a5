use fluidpoll_core::cost::CostError;
use fluidpoll_core::des::{DesError, StatsError};
use fluidpoll_core::fluid::FluidError;
use fluidpoll_core::rfcp::RfcpError;
use fluidpoll_core::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("invalid cost: {0}")]
    Cost(#[from] CostError),
    #[error("fluid computation failed: {0}")]
    Fluid(FluidError),
    #[error("optimization failed: {0}")]
    Rfcp(RfcpError),
    #[error("simulation failed: {0}")]
    Simulation(DesError),
    #[error("statistics failed: {0}")]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration and validation errors, 1 for everything that
    /// goes wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Model(_) | CliError::Cost(_) => 2,
            CliError::Rfcp(RfcpError::EmptyMultiplicitySet | RfcpError::ZeroMultiplicity) => 2,
            CliError::Simulation(DesError::Distribution { .. } | DesError::ZeroScale) => 2,
            _ => 1,
        }
    }
}

impl From<FluidError> for CliError {
    fn from(e: FluidError) -> Self {
        match e {
            FluidError::Model(m) => CliError::Model(m),
            e => CliError::Fluid(e),
        }
    }
}

impl From<RfcpError> for CliError {
    fn from(e: RfcpError) -> Self {
        match e {
            RfcpError::Model(m) => CliError::Model(m),
            RfcpError::Cost(c) => CliError::Cost(c),
            RfcpError::Fluid(f) => f.into(),
            e => CliError::Rfcp(e),
        }
    }
}

impl From<DesError> for CliError {
    fn from(e: DesError) -> Self {
        match e {
            DesError::Model(m) => CliError::Model(m),
            DesError::Fluid(f) => f.into(),
            DesError::Cost(c) => CliError::Cost(c),
            DesError::Stats(s) => CliError::Stats(s),
            e => CliError::Simulation(e),
        }
    }
}
