use serde::{Deserialize, Serialize};

use super::{CapacitanceFrame, Result, SignalError, Trial, ELECTRODES};

/// Frames in one h = 0.1 s window at 100 Hz.
pub const WINDOW_FRAMES: usize = 10;
pub const WINDOW_VALUES: usize = WINDOW_FRAMES * ELECTRODES;

/// A window starting at frame `k` uses frames `k..k+10` and ends at the
/// timestamp of frame `k+10`, so a trial of `n` frames has `n - 10` windows.
pub fn window_count(n_frames: usize) -> usize {
    n_frames.saturating_sub(WINDOW_FRAMES)
}

/// Indices of the non-overlapping windows (every tenth strided window).
pub fn h_grid_indices(n_windows: usize) -> impl Iterator<Item = usize> {
    (0..n_windows).step_by(WINDOW_FRAMES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeature {
    pub t_start: f64,
    /// Time-major: `values[frame * 10 + electrode]`.
    pub values: Vec<f64>,
}

/// Per-electrode min/max used for min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeBounds {
    pub min: [f64; ELECTRODES],
    pub max: [f64; ELECTRODES],
}

impl ElectrodeBounds {
    /// Element-wise mean of several bounds.
    pub fn mean(all: &[ElectrodeBounds]) -> Option<ElectrodeBounds> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let mut out = ElectrodeBounds { min: [0.0; ELECTRODES], max: [0.0; ELECTRODES] };
        for b in all {
            for e in 0..ELECTRODES {
                out.min[e] += b.min[e] / n;
                out.max[e] += b.max[e] / n;
            }
        }
        Some(out)
    }

    /// Writes the normalized frame into `out`, clamped to [0, 1].
    pub fn normalize_frame(&self, frame: &CapacitanceFrame, out: &mut [f64]) {
        for e in 0..ELECTRODES {
            out[e] = normalize_reading(frame.readings[e], self.min[e], self.max[e]);
        }
    }
}

/// `(x - min) / (max - min)` clamped to [0, 1]; a zero-range electrode gives 0.
pub fn normalize_reading(x: f64, min: f64, max: f64) -> f64 {
    let range = max - min;
    if range > 0.0 {
        ((x - min) / range).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn min_max_bounds(frames: &[CapacitanceFrame]) -> ElectrodeBounds {
    let mut b = ElectrodeBounds { min: [f64::INFINITY; ELECTRODES], max: [f64::NEG_INFINITY; ELECTRODES] };
    for f in frames {
        for e in 0..ELECTRODES {
            b.min[e] = b.min[e].min(f.readings[e]);
            b.max[e] = b.max[e].max(f.readings[e]);
        }
    }
    b
}

/// All strided windows of a pour trial, normalized with `bounds`
/// (the trial's own min/max when `None`).
pub fn pour_windows(trial: &Trial, bounds: Option<&ElectrodeBounds>) -> Result<Vec<WindowFeature>> {
    let n = trial.frames.len();
    if n < WINDOW_FRAMES + 1 {
        return Err(SignalError::TooFew { need: WINDOW_FRAMES + 1, got: n });
    }
    let own;
    let bounds = match bounds {
        Some(b) => b,
        None => {
            own = min_max_bounds(&trial.frames);
            &own
        }
    };
    let mut norm = vec![0.0; n * ELECTRODES];
    for (k, f) in trial.frames.iter().enumerate() {
        bounds.normalize_frame(f, &mut norm[k * ELECTRODES..(k + 1) * ELECTRODES]);
    }
    Ok((0..window_count(n))
        .map(|k| WindowFeature {
            t_start: trial.frames[k].t,
            values: norm[k * ELECTRODES..(k + WINDOW_FRAMES) * ELECTRODES].to_vec(),
        })
        .collect())
}

/// Non-overlapping subset of [`pour_windows`].
pub fn h_grid_windows(trial: &Trial, bounds: Option<&ElectrodeBounds>) -> Result<Vec<WindowFeature>> {
    let all = pour_windows(trial, bounds)?;
    let n = all.len();
    let keep: Vec<usize> = h_grid_indices(n).collect();
    let mut all: Vec<Option<WindowFeature>> = all.into_iter().map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| all[i].take()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{Substance, TrialKind};
    use proptest::prelude::*;

    fn pour_trial(n: usize, f: impl Fn(usize, usize) -> f64) -> Trial {
        Trial {
            kind: TrialKind::Pour,
            substance: Substance::Water,
            container: None,
            frames: (0..n)
                .map(|k| CapacitanceFrame { t: k as f64 * 0.01, readings: std::array::from_fn(|e| f(k, e)) })
                .collect(),
            scale: vec![],
            day_seed: 0,
            initial_fill: 150.0,
        }
    }

    #[test]
    fn twenty_second_trial_has_1991_windows() {
        let t = pour_trial(2001, |k, e| (k + e) as f64);
        assert_eq!(pour_windows(&t, None).unwrap().len(), 1991);
        assert_eq!(h_grid_windows(&t, None).unwrap().len(), 200);
    }

    #[test]
    fn eleven_frames_give_one_window() {
        let t = pour_trial(11, |k, _| k as f64);
        let w = pour_windows(&t, None).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].values.len(), 100);
        assert!(pour_windows(&pour_trial(10, |k, _| k as f64), None).is_err());
    }

    #[test]
    fn min_max_by_hand() {
        // electrode 0 spans [100, 300]; a reading of 200 lands at 0.5
        let t = pour_trial(12, |k, _| match k {
            0 => 100.0,
            1 => 300.0,
            _ => 200.0,
        });
        let w = pour_windows(&t, None).unwrap();
        assert_eq!(w[0].values[2 * ELECTRODES], 0.5);
        assert_eq!(w[0].values[0], 0.0);
        assert_eq!(w[0].values[ELECTRODES], 1.0);
    }

    #[test]
    fn zero_range_electrode_maps_to_zero() {
        let t = pour_trial(20, |k, e| if e == 4 { 7.0 } else { k as f64 });
        for w in pour_windows(&t, None).unwrap() {
            for fr in 0..WINDOW_FRAMES {
                assert_eq!(w.values[fr * ELECTRODES + 4], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn window_count_matches_enumeration(n in 11usize..3000) {
            let mut brute = 0;
            let last_t = (n - 1) as f64;
            let mut start = 0.0;
            while start + WINDOW_FRAMES as f64 <= last_t {
                brute += 1;
                start += 1.0;
            }
            prop_assert_eq!(window_count(n), brute);
        }

        #[test]
        fn normalized_values_span_unit_interval(
            n in 11usize..80,
            amp in proptest::collection::vec(0.5..50.0f64, 10),
            phase in proptest::collection::vec(0.0..6.0f64, 10),
        ) {
            let t = pour_trial(n, |k, e| 100.0 + amp[e] * (k as f64 * 0.3 + phase[e]).sin());
            let ws = pour_windows(&t, None).unwrap();
            prop_assert!(ws.iter().all(|w| w.values.iter().all(|v| (0.0..=1.0).contains(v))));
            let b = min_max_bounds(&t.frames);
            for e in 0..ELECTRODES {
                let s: Vec<f64> = t.frames.iter().map(|f| normalize_reading(f.readings[e], b.min[e], b.max[e])).collect();
                let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }
    }
}
