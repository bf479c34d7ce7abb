use super::{ControlError, Result};
use crate::pwp::PwpModel;
use crate::signals::{ElectrodeBounds, Substance};
use crate::simworld::TruthSample;

/// Everything available when an h-grid window completes.
#[derive(Debug, Clone, Copy)]
pub struct WindowContext<'a> {
    /// Normalized window, time-major, `WINDOW_VALUES` long.
    pub window: &'a [f64],
    pub substance: Substance,
    /// Simulator ground truth up to the current tick. Only oracle
    /// predictors may look at it.
    pub truth: &'a [TruthSample],
}

/// Source of the per-window mass estimate the controller accumulates.
pub trait WindowPredictor {
    fn delta(&self, ctx: &WindowContext) -> Result<f64>;

    /// Frozen normalization bounds. `None` feeds raw readings.
    fn bounds(&self, substance: Substance) -> Result<Option<&ElectrodeBounds>>;
}

impl WindowPredictor for PwpModel {
    fn delta(&self, ctx: &WindowContext) -> Result<f64> {
        let label = ctx.substance.pour_label().ok_or(crate::pwp::PwpError::NotPourable(ctx.substance))?;
        Ok(self.predict_window(ctx.window, label)?.dw_hat)
    }

    fn bounds(&self, substance: Substance) -> Result<Option<&ElectrodeBounds>> {
        self.bounds_for(substance).map(Some).ok_or(ControlError::NoBounds(substance))
    }
}

/// Reports the true mass that reached the scale over the last ten ticks.
/// Summed over the h-grid this telescopes to the current true scale weight.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl WindowPredictor for OraclePredictor {
    fn delta(&self, ctx: &WindowContext) -> Result<f64> {
        let n = ctx.truth.len();
        let now = ctx.truth.last().ok_or_else(|| ControlError::Predictor("oracle needs ground truth".into()))?.scale_true;
        let before = if n > crate::signals::WINDOW_FRAMES { ctx.truth[n - 1 - crate::signals::WINDOW_FRAMES].scale_true } else { 0.0 };
        Ok(now - before)
    }

    fn bounds(&self, _: Substance) -> Result<Option<&ElectrodeBounds>> {
        Ok(None)
    }
}
