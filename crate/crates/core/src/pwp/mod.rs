//! Poured-weight predictor: a residual MLP mapping one normalized 0.1 s
//! capacitance window plus the substance label to the predicted poured mass
//! in that window and two time offsets that align the window with the
//! delayed scale signal during training.

mod data;
mod loss;
mod model;
mod train;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::neural::{Activation, NetSpec, NeuralError};
use crate::signals::{SignalError, Substance};

pub use data::{prepare_trial, simulate_training_pours, split_train_val, PreparedTrial};
pub use loss::{loss_aux, loss_p1, loss_p2, loss_weight, AuxTerm, LossParts, LossWeights, WeightTerm};
pub use model::PwpModel;
pub use train::{
    batch_objective, train_pwp, validation_parts, CurveRow, PwpBatch, PwpTrainConfig, TrainReport, Validation,
};
pub use trajectory::WeightTrajectory;
pub(crate) use train::frozen_bounds;

/// Substance vocabulary size and embedding width.
pub const LABELS: usize = 5;
pub const EMBED_DIM: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum PwpError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{substance}: need at least 2 trials, got {got}")]
    TooFewTrials { substance: Substance, got: usize },
    #[error("{0} is not a pouring substance")]
    NotPourable(Substance),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PwpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PwpVariant {
    /// Predicts the window mass and both offsets; trained on all four terms.
    #[default]
    Full,
    /// Predicts the window mass only, offsets fixed at 0, squared error only.
    NoOffsets,
}

impl PwpVariant {
    pub fn output_dim(self) -> usize {
        match self {
            PwpVariant::Full => 3,
            PwpVariant::NoOffsets => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PwpOutput {
    pub dw_hat: f64,
    pub o_s: f64,
    pub o_e: f64,
}

/// Reference architecture: 150 inputs, seven 256-wide residual blocks,
/// dropout 0.05, three ReLU outputs, one (5, 50) label embedding.
pub fn build_pwp() -> NetSpec {
    pwp_spec(256, 7, 0.05, PwpVariant::Full)
}

pub fn pwp_spec(width: usize, blocks: usize, dropout: f64, variant: PwpVariant) -> NetSpec {
    NetSpec {
        input_dim: crate::signals::WINDOW_VALUES + EMBED_DIM,
        blocks,
        width,
        dropout_rate: dropout,
        output_dim: variant.output_dim(),
        output_activation: Activation::Relu,
        embeddings: vec![(LABELS, EMBED_DIM)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Params;

    #[test]
    fn reference_architecture() {
        let s = build_pwp();
        assert_eq!((s.blocks, s.width, s.dropout_rate, s.output_dim), (7, 256, 0.05, 3));
        assert_eq!(s.input_dim, 150);
        assert_eq!(s.embeddings, vec![(5, 50)]);
        let closed = 5 * 50 + (150 * 256 + 256) + 7 * (256 * 256 + 256) + (256 * 3 + 3);
        assert_eq!(s.param_count(), closed);
        assert_eq!(Params::init(&s, 0).unwrap().len(), closed);
    }
}
