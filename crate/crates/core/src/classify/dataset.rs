use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifyError, JointLabel, Result, JOINT_CLASSES};
use crate::signals::{grasp_features, DiffStep, ElectrodeSet, ELECTRODES, GRASP_FEATURE_DIM, GRASP_FRAMES};
use crate::simworld::{grasp_signature, mix_seed, Catalog};

pub const TRAIN_DAYS: [i64; 3] = [0, 1, 2];
pub const TEST_DAYS: [i64; 1] = [3];

/// Feature values per electrode: the raw block plus its gradient.
const PER_ELECTRODE: usize = 2 * GRASP_FRAMES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Grasp iterations per class and day.
    pub iterations: usize,
    pub train_days: Vec<i64>,
    pub test_days: Vec<i64>,
    /// Multiplies every grasp noise term of the catalog; 0 is noise-free.
    pub noise_scale: f64,
    pub diff_step: DiffStep,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            iterations: 10,
            train_days: TRAIN_DAYS.to_vec(),
            test_days: TEST_DAYS.to_vec(),
            noise_scale: 1.0,
            diff_step: DiffStep::PerIndex,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraspDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<JointLabel>,
}

impl GraspDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn joint_labels(&self) -> Vec<usize> {
        self.y.iter().map(|l| l.joint()).collect()
    }

    /// Keeps only samples whose joint class is listed.
    pub fn restrict(&self, classes: &[usize]) -> GraspDataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.y[i].joint())).collect();
        GraspDataset { x: keep.iter().map(|&i| self.x[i].clone()).collect(), y: keep.iter().map(|&i| self.y[i]).collect() }
    }

    pub fn select_electrodes(&self, set: ElectrodeSet) -> Result<GraspDataset> {
        let x = self.x.iter().map(|f| electrode_subset(f, set)).collect::<Result<_>>()?;
        Ok(GraspDataset { x, y: self.y.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSplit {
    pub train: GraspDataset,
    pub test: GraspDataset,
}

fn day_block(catalog: &Catalog, cfg: &DatasetConfig, day: i64) -> Result<GraspDataset> {
    let noise = catalog.grasp.scaled(cfg.noise_scale);
    let jobs: Vec<(usize, JointLabel)> =
        (0..cfg.iterations).flat_map(|it| JointLabel::all().map(move |l| (it, l))).collect();
    let x = jobs
        .par_iter()
        .map(|&(it, l)| {
            let stream = ((day as u64) << 32) ^ ((it as u64) << 8) ^ l.joint() as u64;
            let t = grasp_signature(catalog, l.container, l.substance, day, mix_seed(cfg.seed, stream), &noise);
            Ok(grasp_features(&t, cfg.diff_step)?.into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraspDataset { x, y: jobs.into_iter().map(|(_, l)| l).collect() })
}

/// Every class grasped `iterations` times on each day. With the defaults
/// this gives 2430 training and 810 test samples.
pub fn build_grasp_dataset(catalog: &Catalog, cfg: &DatasetConfig) -> Result<GraspSplit> {
    if cfg.iterations == 0 || cfg.train_days.is_empty() || cfg.test_days.is_empty() {
        return Err(ClassifyError::Config("need at least one iteration, one training day and one test day".into()));
    }
    if let Some(d) = cfg.train_days.iter().find(|d| cfg.test_days.contains(d)) {
        return Err(ClassifyError::Config(format!("day {d} is both a training and a test day")));
    }
    let collect = |days: &[i64]| -> Result<GraspDataset> {
        let mut out = GraspDataset::default();
        for &d in days {
            let b = day_block(catalog, cfg, d)?;
            out.x.extend(b.x);
            out.y.extend(b.y);
        }
        Ok(out)
    };
    Ok(GraspSplit { train: collect(&cfg.train_days)?, test: collect(&cfg.test_days)? })
}

/// The 400-value blocks of the chosen electrodes, in electrode order.
pub fn electrode_subset(features: &[f64], set: ElectrodeSet) -> Result<Vec<f64>> {
    if features.len() != GRASP_FEATURE_DIM {
        return Err(ClassifyError::Dimension { expected: GRASP_FEATURE_DIM, got: features.len() });
    }
    if set.is_empty() {
        return Err(ClassifyError::Config("empty electrode subset".into()));
    }
    let mut out = Vec::with_capacity(set.len() * PER_ELECTRODE);
    for e in (0..ELECTRODES).filter(|&e| set.contains(e)) {
        out.extend_from_slice(&features[e * PER_ELECTRODE..(e + 1) * PER_ELECTRODE]);
    }
    Ok(out)
}

/// Prefixes of one seeded permutation of the 81 joint classes, so every
/// subset contains the previous ones. Each subset is returned sorted.
pub fn nested_class_subsets(sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    if sizes.iter().any(|&n| n == 0 || n > JOINT_CLASSES) || sizes.windows(2).any(|w| w[1] < w[0]) {
        return Err(ClassifyError::Config(format!("class counts {sizes:?} must be ascending within 1..=81")));
    }
    let mut order: Vec<usize> = (0..JOINT_CLASSES).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes
        .iter()
        .map(|&n| {
            let mut s = order[..n].to_vec();
            s.sort_unstable();
            s
        })
        .collect())
}
