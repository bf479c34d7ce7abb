//! Closed-loop pouring: a phase machine over the 100 Hz stream that
//! accumulates predicted window masses on the h-grid and retracts at the stop
//! weight, plus a behavior-cloned baseline that decides the rotation
//! direction directly.

mod bc;
mod controller;
mod predictor;

use crate::neural::NeuralError;
use crate::owe::OweError;
use crate::pwp::PwpError;
use crate::signals::Substance;

pub use bc::{
    bc_spec, generate_bc_demos, train_bc, BcDemo, BcModel, BcTrainConfig, BcTrainReport, TargetClass, BC_TARGETS,
};
pub use controller::{
    run_pour, settle_horizon, Brain, Controller, Phase, PourOptions, PourResult, StepLog, MAX_POUR_SECONDS,
};
pub use predictor::{OraclePredictor, WindowContext, WindowPredictor};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error(transparent)]
    Pwp(#[from] PwpError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Owe(#[from] OweError),
    #[error("no normalization bounds for {0}")]
    NoBounds(Substance),
    #[error("target {0} g is not one of the trained classes")]
    UnknownTarget(f64),
    #[error("demonstrations contain no {substance} pours at {target} g")]
    MissingClass { substance: Substance, target: f64 },
    #[error("{0}")]
    Predictor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ControlError>;
