//! Small dense-network stack: residual MLP forward/backward, embeddings,
//! dropout, losses, AdamW and finite-difference gradient checks.
//!
//! Everything is `f64`. Parameters live in one flat vector described by a
//! layout map so the optimizer and the gradient checker can treat the network
//! as a plain function of a vector.

mod gradcheck;
mod loss;
mod net;
mod optim;
mod params;

use serde::{Deserialize, Serialize};

pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use loss::{bce, mse};
pub use net::{Gradients, Mode, Net, NetInput, Tape};
pub use optim::AdamW;
pub use params::{Checkpoint, Params, Segment, CHECKPOINT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("label {label} out of range for embedding table {table} (vocab {vocab})")]
    Label { table: usize, label: usize, vocab: usize },
    #[error("tape is stale: parameters changed since the forward pass")]
    StaleTape,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Architecture of a residual MLP.
///
/// The input row is the dense part followed by one looked-up row per
/// embedding table, so `input_dim = dense_dim + sum(embedding dims)`. A linear
/// projection maps it to `width`, then `blocks` residual blocks compute
/// `x + dropout(relu(W x + b))`, then a linear head produces `output_dim`
/// values passed through `output_activation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub blocks: usize,
    pub width: usize,
    pub dropout_rate: f64,
    pub output_dim: usize,
    pub output_activation: Activation,
    /// `(vocab, dim)` per table.
    pub embeddings: Vec<(usize, usize)>,
}

impl NetSpec {
    pub fn embedding_dim(&self) -> usize {
        self.embeddings.iter().map(|e| e.1).sum()
    }

    pub fn dense_dim(&self) -> usize {
        self.input_dim.saturating_sub(self.embedding_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NeuralError::Spec(m.to_string()));
        if self.input_dim == 0 || self.width == 0 || self.output_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.embeddings.iter().any(|&(v, d)| v == 0 || d == 0) {
            return bad("embedding tables need positive vocab and dim");
        }
        if self.embedding_dim() > self.input_dim {
            return bad("embedding dims exceed input_dim");
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let emb: usize = self.embeddings.iter().map(|(v, d)| v * d).sum();
        let stem = self.input_dim * self.width + self.width;
        let block = self.width * self.width + self.width;
        let head = self.width * self.output_dim + self.output_dim;
        emb + stem + self.blocks * block + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 7,
            blocks: 2,
            width: 5,
            dropout_rate: 0.1,
            output_dim: 3,
            output_activation: Activation::Relu,
            embeddings: vec![(4, 3)],
        }
    }

    #[test]
    fn validation() {
        assert!(spec().validate().is_ok());
        assert!(NetSpec { dropout_rate: 1.0, ..spec() }.validate().is_err());
        assert!(NetSpec { width: 0, ..spec() }.validate().is_err());
        assert!(NetSpec { embeddings: vec![(4, 8)], ..spec() }.validate().is_err());
        assert_eq!(spec().dense_dim(), 4);
    }

    #[test]
    fn param_count_matches_layout() {
        let s = spec();
        let p = Params::init(&s, 1).unwrap();
        assert_eq!(p.len(), s.param_count());
        assert_eq!(s.param_count(), 12 + (35 + 5) + 2 * (25 + 5) + (15 + 3));
    }
}
