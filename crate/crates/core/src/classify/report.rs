use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClassifyError, Forest, JointLabel, Result};
use crate::signals::{Container, Substance};

/// Square confusion matrix, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Confusion { labels, counts: vec![vec![0; n]; n] }
    }

    pub fn accuracy(&self) -> f64 {
        let total: usize = self.counts.iter().flatten().sum();
        let diag: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        if total == 0 { 0.0 } else { diag as f64 / total as f64 }
    }

    /// Header row `true\pred,<labels>`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n: usize,
    pub container_acc: f64,
    pub substance_acc: f64,
    pub joint_acc: f64,
    pub container: Confusion,
    pub substance: Confusion,
    pub joint: Confusion,
}

impl Report {
    /// Marginal accuracies project each joint prediction onto its container
    /// and substance.
    pub fn from_predictions(truth: &[JointLabel], pred: &[JointLabel]) -> Result<Report> {
        if truth.is_empty() {
            return Err(ClassifyError::Empty);
        }
        if truth.len() != pred.len() {
            return Err(ClassifyError::LengthMismatch { features: pred.len(), labels: truth.len() });
        }
        let names = |v: Vec<String>| Confusion::new(v);
        let mut container = names(Container::ALL.iter().map(|c| c.to_string()).collect());
        let mut substance = names(Substance::ALL.iter().map(|s| s.to_string()).collect());
        let mut joint = names(JointLabel::all().map(|l| l.to_string()).collect());
        for (t, p) in truth.iter().zip(pred) {
            container.counts[t.container.index()][p.container.index()] += 1;
            substance.counts[t.substance.index()][p.substance.index()] += 1;
            joint.counts[t.joint()][p.joint()] += 1;
        }
        Ok(Report {
            n: truth.len(),
            container_acc: container.accuracy(),
            substance_acc: substance.accuracy(),
            joint_acc: joint.accuracy(),
            container,
            substance,
            joint,
        })
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "metric,value\nn,{}\ncontainer_acc,{}\nsubstance_acc,{}\njoint_acc,{}\n",
            self.n, self.container_acc, self.substance_acc, self.joint_acc
        )
    }
}

pub fn evaluate<S: AsRef<[f64]> + Sync>(forest: &Forest, x: &[S], y: &[JointLabel]) -> Result<Report> {
    let pred = forest.predict_many(x)?;
    let pred: Vec<JointLabel> = pred
        .into_iter()
        .map(|j| JointLabel::from_joint(j).ok_or(ClassifyError::LabelRange { label: j, classes: super::JOINT_CLASSES }))
        .collect::<Result<_>>()?;
    Report::from_predictions(y, &pred)
}
