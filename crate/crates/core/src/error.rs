use alloc::string::String;

/// Failure signals raised across the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("integration produced a non-finite state")]
    IntegrationFailure,
    #[error("disturbance {norm} exceeds the box bound {bound}")]
    DisturbanceOutOfBounds { norm: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("E·Eᵀ is singular, disturbance preimage undefined")]
    DegenerateDisturbanceMap,
    #[error("invalid certificate: {0}")]
    Certificate(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("nonlinear program callback returned a non-finite value")]
    Numerical,
    #[error("moving horizon estimate unavailable")]
    MheUnavailable,
    #[error("no estimate candidates")]
    EstimationFailure,
    #[error("terminal set vanished: ē_N={e_bar}, s̄_N={s_bar}")]
    TerminalSetVanished { e_bar: f64, s_bar: f64 },
    #[error("safe set construction failed: {0}")]
    SafeSetConstruction(String),
    #[error("initial safety filter problem is infeasible")]
    InitialInfeasible,
    #[error("reduced horizon {horizon} infeasible at step {step}")]
    ContractViolation { step: usize, horizon: usize },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = core::result::Result<T, Error>;
