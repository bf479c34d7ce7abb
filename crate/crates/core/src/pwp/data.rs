use ndarray::Array2;

use super::{PwpError, Result, WeightTrajectory};
use crate::signals::{
    pour_windows, ElectrodeBounds, ElectrodeSet, Substance, Trial, TrialKind, ELECTRODES, POUR_SUBSTANCES,
    WINDOW_FRAMES, WINDOW_VALUES,
};
use crate::simworld::{mix_seed, run_scripted_pour, Catalog, PourSetup, StopAndGo};

/// A pour trial turned into network rows plus its weight trajectory.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub substance: Substance,
    pub label: usize,
    /// One strided window per row, `WINDOW_VALUES` columns.
    pub windows: Array2<f64>,
    pub t_start: Vec<f64>,
    pub traj: WeightTrajectory,
}

impl PreparedTrial {
    pub fn n_windows(&self) -> usize {
        self.windows.nrows()
    }

    /// Number of h-grid windows.
    pub fn n_grid(&self) -> usize {
        self.n_windows().div_ceil(WINDOW_FRAMES)
    }
}

/// Zeroes the columns of disabled electrodes in a time-major window.
pub(crate) fn mask_window(values: &mut [f64], electrodes: ElectrodeSet) {
    if electrodes.is_all() {
        return;
    }
    for (i, v) in values.iter_mut().enumerate() {
        if !electrodes.contains(i % ELECTRODES) {
            *v = 0.0;
        }
    }
}

/// Windows normalized with the trial's own bounds (or `bounds`), disabled
/// electrodes zeroed.
pub fn prepare_trial(trial: &Trial, electrodes: ElectrodeSet, bounds: Option<&ElectrodeBounds>) -> Result<PreparedTrial> {
    let label = trial.substance.pour_label().ok_or(PwpError::NotPourable(trial.substance))?;
    if trial.kind != TrialKind::Pour || trial.scale.is_empty() {
        return Err(PwpError::Signal(crate::signals::SignalError::Invalid("expected a pour trial with scale samples".into())));
    }
    let wins = pour_windows(trial, bounds)?;
    let mut windows = Array2::zeros((wins.len(), WINDOW_VALUES));
    for (r, w) in wins.iter().enumerate() {
        let mut row = w.values.clone();
        mask_window(&mut row, electrodes);
        windows.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(PreparedTrial {
        substance: trial.substance,
        label,
        windows,
        t_start: wins.iter().map(|w| w.t_start).collect(),
        traj: WeightTrajectory::new(&trial.scale),
    })
}

/// `per_substance` 20 s stop-and-go pours of each pouring substance.
/// Repetition `r` runs on session day `r`.
pub fn simulate_training_pours(catalog: &Catalog, per_substance: usize, seed: u64) -> Vec<Trial> {
    let mut out = Vec::with_capacity(per_substance * POUR_SUBSTANCES.len());
    for (si, &s) in POUR_SUBSTANCES.iter().enumerate() {
        for r in 0..per_substance {
            let setup = PourSetup {
                day_seed: r as i64,
                ..PourSetup::new(s, mix_seed(seed, (si * 10_000 + r) as u64))
            };
            let mut policy = StopAndGo::new(mix_seed(setup.seed, 1));
            out.push(run_scripted_pour(catalog, &setup, &mut policy, 20.0));
        }
    }
    out
}

/// Per-substance split: the first `ceil(train_frac * n)` trials of each
/// substance (in input order) train, the rest validate. Every substance
/// needs at least two trials.
pub fn split_train_val(trials: &[Trial], train_frac: f64) -> Result<(Vec<Trial>, Vec<Trial>)> {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for s in POUR_SUBSTANCES {
        let of: Vec<&Trial> = trials.iter().filter(|t| t.substance == s).collect();
        if of.len() < 2 {
            return Err(PwpError::TooFewTrials { substance: s, got: of.len() });
        }
        let n_train = ((train_frac * of.len() as f64).ceil() as usize).clamp(1, of.len() - 1);
        for (i, t) in of.into_iter().enumerate() {
            if i < n_train { train.push(t.clone()) } else { val.push(t.clone()) }
        }
    }
    Ok((train, val))
}
