use serde::{Deserialize, Serialize};

use super::{OverpourSample, Result};
use crate::control::{run_pour, Brain, PourOptions, PourResult, WindowPredictor};
use crate::signals::Substance;
use crate::simworld::{mix_seed, Catalog, PourSetup};

/// Collection targets in grams: 30 to 100 in steps of 10.
pub const COLLECT_TARGETS: [f64; 8] = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];
pub const COLLECT_REPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub targets: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { targets: COLLECT_TARGETS.to_vec(), reps: COLLECT_REPS, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOutcome {
    pub samples: Vec<OverpourSample>,
    /// Pours that hit the maximum angle or faulted before the target.
    pub excluded: Vec<PourResult>,
}

/// Pours every target `reps` times with the bare predictor (no overpour
/// correction) and records how much more landed than was predicted at
/// retraction.
pub fn collect_overpour(
    catalog: &Catalog,
    predictor: &dyn WindowPredictor,
    substance: Substance,
    cfg: &CollectConfig,
) -> Result<CollectOutcome> {
    let opts = PourOptions::default();
    let mut out = CollectOutcome { samples: Vec::new(), excluded: Vec::new() };
    for (ti, &target) in cfg.targets.iter().enumerate() {
        for rep in 0..cfg.reps {
            let stream = (substance.index() * 10_000 + ti * 100 + rep) as u64;
            let setup = PourSetup { day_seed: rep as i64, ..PourSetup::new(substance, mix_seed(cfg.seed, stream)) };
            let r = run_pour(catalog, &setup, target, Brain::Model { predictor, owe: None }, &opts).map_err(Box::new)?;
            match r.w_hat_at_retract {
                Some(w) if !r.exhausted && r.fault.is_none() && !r.timed_out => out.samples.push(OverpourSample {
                    substance,
                    target,
                    w_stop_observed: w,
                    w_overpoured: r.final_true - w,
                }),
                _ => {
                    log::warn!("{substance} target {target} g rep {rep}: pour never reached the target, excluded");
                    out.excluded.push(r);
                }
            }
        }
    }
    Ok(out)
}
