//! Joint container and substance recognition from grasp-cycle features with
//! a random forest, plus the electrode and class-count ablations.

mod dataset;
mod forest;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::signals::{Container, SignalError, Substance};

pub use dataset::{
    build_grasp_dataset, electrode_subset, nested_class_subsets, DatasetConfig, GraspDataset, GraspSplit, TEST_DAYS,
    TRAIN_DAYS,
};
pub use forest::{fit_forest, gini, Forest, ForestConfig, MaxFeatures, Node, Tree, FOREST_FORMAT_VERSION};
pub use report::{evaluate, Confusion, Report};

/// Number of joint classes: nine containers times nine substances.
pub const JOINT_CLASSES: usize = 81;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("empty dataset")]
    Empty,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("forest file: {0}")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// A container and the substance it holds, encoded as
/// `container * 9 + substance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointLabel {
    pub container: Container,
    pub substance: Substance,
}

impl JointLabel {
    pub fn new(container: Container, substance: Substance) -> Self {
        JointLabel { container, substance }
    }

    pub fn joint(self) -> usize {
        self.container.index() * Substance::ALL.len() + self.substance.index()
    }

    pub fn from_joint(j: usize) -> Option<Self> {
        let n = Substance::ALL.len();
        Some(JointLabel { container: Container::from_index(j / n)?, substance: Substance::from_index(j % n)? })
    }

    /// All 81 labels in joint order.
    pub fn all() -> impl Iterator<Item = JointLabel> {
        (0..JOINT_CLASSES).filter_map(JointLabel::from_joint)
    }
}

impl fmt::Display for JointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.container, self.substance)
    }
}
