use thiserror::Error;

use crate::field::ObstacleId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("moment of order {gamma} diverges for this volume distribution")]
    DivergentMoment { gamma: f64 },

    #[error("obstacle {0} consumed twice")]
    DoubleConsume(ObstacleId),

    #[error("cascade exceeded {steps} merge steps at t = {t}")]
    CascadeOverflow { steps: usize, t: f64 },

    #[error("tagged volume {volume} exceeded the budget {budget} at t = {t}")]
    BudgetExceeded { volume: f64, budget: f64, t: f64 },

    #[error("kinetic path exceeded {max_jumps} jumps")]
    JumpBudgetExceeded { max_jumps: usize },

    #[error("mass drift {drift:e} exceeds tolerance {tol:e}")]
    MassDrift { drift: f64, tol: f64 },

    #[error("mass {mass:e} escaped the top of the grid")]
    GridOverflow { mass: f64 },

    #[error("Monte Carlo noise too large to resolve the trend: {0}")]
    InconclusiveNoise(String),

    #[error("scripted construction mismatch: {0}")]
    ConstructionMismatch(String),
}

pub type Result<T, E = CtpError> = std::result::Result<T, E>;
