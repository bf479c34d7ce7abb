use serde::{Deserialize, Serialize};

use super::{Result, SignalError, Trial, ELECTRODES, GRASP_FRAMES};

pub const GRASP_FEATURE_DIM: usize = 2 * GRASP_FRAMES * ELECTRODES;

/// Denominator convention for the finite-difference block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffStep {
    /// Differences per sample index.
    #[default]
    PerIndex,
    /// Differences per second, using the frame timestamps.
    PerSecond,
}

/// `[c_1, c_1', c_2, c_2', ..., c_10, c_10']`, 400 values per electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspFeature(Vec<f64>);

impl GraspFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Value block of electrode `e` (0-based).
    pub fn values(&self, e: usize) -> &[f64] {
        let base = e * 2 * GRASP_FRAMES;
        &self.0[base..base + GRASP_FRAMES]
    }

    /// Gradient block of electrode `e` (0-based).
    pub fn gradient(&self, e: usize) -> &[f64] {
        let base = e * 2 * GRASP_FRAMES + GRASP_FRAMES;
        &self.0[base..base + GRASP_FRAMES]
    }
}

/// Central differences in the interior, one-sided at both ends.
fn finite_difference(values: &[f64], times: &[f64], step: DiffStep, out: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let denom = |a: usize, b: usize| match step {
        DiffStep::PerIndex => (b - a) as f64,
        DiffStep::PerSecond => times[b] - times[a],
    };
    out[0] = (values[1] - values[0]) / denom(0, 1);
    for k in 1..n - 1 {
        out[k] = (values[k + 1] - values[k - 1]) / denom(k - 1, k + 1);
    }
    out[n - 1] = (values[n - 1] - values[n - 2]) / denom(n - 2, n - 1);
}

pub fn grasp_features(trial: &Trial, step: DiffStep) -> Result<GraspFeature> {
    if trial.frames.len() != GRASP_FRAMES {
        return Err(SignalError::Dimension { expected: GRASP_FRAMES, got: trial.frames.len() });
    }
    let times: Vec<f64> = trial.frames.iter().map(|f| f.t).collect();
    let mut f = vec![0.0; GRASP_FEATURE_DIM];
    for e in 0..ELECTRODES {
        let base = e * 2 * GRASP_FRAMES;
        let (vals, grads) = f[base..base + 2 * GRASP_FRAMES].split_at_mut(GRASP_FRAMES);
        for (v, frame) in vals.iter_mut().zip(&trial.frames) {
            *v = frame.readings[e];
        }
        finite_difference(vals, &times, step, grads);
    }
    Ok(GraspFeature(f))
}

/// Per-dimension z-scoring fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of every dimension.
    pub fn fit<S: AsRef<[f64]>>(features: &[S]) -> Result<Self> {
        if features.len() < 2 {
            return Err(SignalError::TooFew { need: 2, got: features.len() });
        }
        let dim = features[0].as_ref().len();
        let mut mean = vec![0.0; dim];
        for f in features {
            let f = f.as_ref();
            if f.len() != dim {
                return Err(SignalError::Dimension { expected: dim, got: f.len() });
            }
            mean.iter_mut().zip(f).for_each(|(m, x)| *m += x);
        }
        let n = features.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in features {
            for ((v, x), m) in var.iter_mut().zip(f.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Standardizer { mean, std })
    }

    /// Zero-variance dimensions map to 0.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.mean.len() {
            return Err(SignalError::Dimension { expected: self.mean.len(), got: f.len() });
        }
        Ok(f.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{CapacitanceFrame, Container, Substance, TrialKind};

    fn trial_from(f: impl Fn(usize, usize) -> f64) -> Trial {
        Trial {
            kind: TrialKind::Grasp,
            substance: Substance::Water,
            container: Some(Container::Pp),
            frames: (0..GRASP_FRAMES)
                .map(|k| CapacitanceFrame { t: k as f64 * 0.01, readings: std::array::from_fn(|e| f(k, e)) })
                .collect(),
            scale: vec![],
            day_seed: 0,
            initial_fill: 150.0,
        }
    }

    #[test]
    fn feature_length_is_4000() {
        let f = grasp_features(&trial_from(|k, e| (k * e) as f64), DiffStep::PerIndex).unwrap();
        assert_eq!(f.as_slice().len(), 4000);
    }

    #[test]
    fn constant_signal_has_zero_gradient() {
        let f = grasp_features(&trial_from(|_, _| 5.0), DiffStep::PerSecond).unwrap();
        for e in 0..ELECTRODES {
            assert!(f.gradient(e).iter().all(|&g| g == 0.0));
            assert!(f.values(e).iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn ramp_gradient_per_second() {
        let f = grasp_features(&trial_from(|k, _| k as f64), DiffStep::PerSecond).unwrap();
        for e in 0..ELECTRODES {
            for &g in &f.gradient(e)[1..GRASP_FRAMES - 1] {
                assert!((g - 100.0).abs() < 1e-9, "{g}");
            }
        }
        let f = grasp_features(&trial_from(|k, _| k as f64), DiffStep::PerIndex).unwrap();
        assert!(f.gradient(3).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn endpoints_use_one_sided_differences() {
        let f = grasp_features(&trial_from(|k, _| (k * k) as f64), DiffStep::PerIndex).unwrap();
        let g = f.gradient(0);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], 2.0);
        assert_eq!(g[GRASP_FRAMES - 1], (199 * 199 - 198 * 198) as f64);
    }

    #[test]
    fn wrong_frame_count_is_dimension_error() {
        let mut t = trial_from(|_, _| 1.0);
        t.frames.pop();
        assert!(matches!(grasp_features(&t, DiffStep::PerIndex), Err(SignalError::Dimension { .. })));
    }

    #[test]
    fn electrode_permutation_permutes_blocks() {
        let perm = [3usize, 7, 1, 0, 9, 2, 8, 4, 6, 5];
        let base = |k: usize, e: usize| ((k * 31 + e * 17) % 23) as f64 + e as f64;
        let a = grasp_features(&trial_from(base), DiffStep::PerIndex).unwrap();
        let b = grasp_features(&trial_from(|k, e| base(k, perm[e])), DiffStep::PerIndex).unwrap();
        for e in 0..ELECTRODES {
            assert_eq!(b.values(e), a.values(perm[e]));
            assert_eq!(b.gradient(e), a.gradient(perm[e]));
        }
    }

    #[test]
    fn standardizer_self_transform_is_unit() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64, 3.0]).collect();
        let s = Standardizer::fit(&data).unwrap();
        let z: Vec<Vec<f64>> = data.iter().map(|d| s.apply(d).unwrap()).collect();
        for j in 0..2 {
            let m: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 20.0;
            let v: f64 = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(z.iter().all(|r| r[2] == 0.0));
    }

    #[test]
    fn held_out_uses_training_statistics() {
        let train: Vec<Vec<f64>> = vec![vec![1.0, 10.0], vec![3.0, 14.0], vec![8.0, 9.0]];
        let s = Standardizer::fit(&train).unwrap();
        let x = [4.5, -2.0];
        let got = s.apply(&x).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = train.iter().map(|r| r[j]).collect();
            let mu = col.iter().sum::<f64>() / 3.0;
            let sd = (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0).sqrt();
            assert!((got[j] - (x[j] - mu) / sd).abs() < 1e-12);
        }
        assert!(s.apply(&[1.0]).is_err());
    }

    #[test]
    fn standardizer_needs_samples() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(Standardizer::fit(&empty).is_err());
    }
}
