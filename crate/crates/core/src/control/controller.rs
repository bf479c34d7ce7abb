use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bc::{BcModel, TargetClass};
use super::predictor::{WindowContext, WindowPredictor};
use super::{ControlError, Result};
use crate::owe::{stop_weight, OweCoeffs};
use crate::signals::{ElectrodeBounds, Substance, Trial, ELECTRODES, WINDOW_FRAMES, WINDOW_VALUES};
use crate::simworld::{Catalog, Observation, PourSetup, TruthSample, WristCommand};

/// Hard stop for a single pour, in simulated seconds.
pub const MAX_POUR_SECONDS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Forward,
    Retract,
    Settle,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::Retract => "retract",
            Phase::Settle => "settle",
            Phase::Done => "done",
        }
    }
}

/// What decides when to stop pouring.
#[derive(Clone, Copy)]
pub enum Brain<'a> {
    /// Accumulate predicted window masses and retract once the sum reaches
    /// the stop weight: corrected by `owe` when given, the bare target
    /// otherwise.
    Model { predictor: &'a dyn WindowPredictor, owe: Option<&'a OweCoeffs> },
    /// Retract at the first window the cloned policy labels Backward.
    Cloned(&'a BcModel),
}

enum Decider<'a> {
    Threshold { predictor: &'a dyn WindowPredictor, w_stop: f64 },
    Cloned { policy: &'a BcModel, class: TargetClass },
}

/// One control tick as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub phase: Phase,
    pub angle: f64,
    /// Set on ticks that completed an h-grid window during Forward.
    pub dw_hat: Option<f64>,
    pub w_hat: f64,
    pub scale_true: f64,
    pub scale_read: f64,
}

/// Tick-level state machine. Feed it one observation per 0.01 s tick.
pub struct Controller<'a> {
    decider: Decider<'a>,
    substance: Substance,
    bounds: Option<ElectrodeBounds>,
    max_angle: f64,
    settle: f64,
    phase: Phase,
    w_hat: f64,
    deltas: Vec<f64>,
    frames: Vec<[f64; ELECTRODES]>,
    settle_since: f64,
    retract_step: Option<u64>,
    w_hat_at_retract: Option<f64>,
    exhausted: bool,
    fault: Option<String>,
}

impl<'a> Controller<'a> {
    fn new(decider: Decider<'a>, substance: Substance, bounds: Option<ElectrodeBounds>, max_angle: f64, settle: f64) -> Self {
        Controller {
            decider,
            substance,
            bounds,
            max_angle,
            settle,
            phase: Phase::Forward,
            w_hat: 0.0,
            deltas: Vec::new(),
            frames: Vec::with_capacity(WINDOW_FRAMES),
            settle_since: 0.0,
            retract_step: None,
            w_hat_at_retract: None,
            exhausted: false,
            fault: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn w_hat(&self) -> f64 {
        self.w_hat
    }

    /// Threshold in use; `None` for the cloned policy.
    pub fn w_stop(&self) -> Option<f64> {
        match self.decider {
            Decider::Threshold { w_stop, .. } => Some(w_stop),
            Decider::Cloned { .. } => None,
        }
    }

    /// Every accumulated window estimate, in order.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    fn push_frame(&mut self, obs: &Observation) {
        let mut row = [0.0; ELECTRODES];
        match &self.bounds {
            Some(b) => b.normalize_frame(&obs.frame, &mut row),
            None => row = obs.frame.readings,
        }
        if self.frames.len() == WINDOW_FRAMES {
            self.frames.remove(0);
        }
        self.frames.push(row);
    }

    fn window(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(WINDOW_VALUES);
        for f in &self.frames {
            w.extend_from_slice(f);
        }
        w
    }

    fn retract(&mut self, step: u64) {
        self.phase = Phase::Retract;
        self.retract_step = Some(step);
        self.w_hat_at_retract = Some(self.w_hat);
    }

    /// Advances one tick and returns the command to apply plus the window
    /// estimate accumulated on this tick, if any.
    pub fn tick(&mut self, obs: &Observation, truth: &[TruthSample]) -> (WristCommand, Option<f64>) {
        self.push_frame(obs);
        let mut dw = None;
        match self.phase {
            Phase::Forward => {
                let window_done = (obs.step as usize + 1).is_multiple_of(WINDOW_FRAMES) && self.frames.len() == WINDOW_FRAMES;
                let mut stop = false;
                if window_done {
                    let window = self.window();
                    let ctx = WindowContext { window: &window, substance: self.substance, truth };
                    match &self.decider {
                        Decider::Threshold { predictor, .. } => match predictor.delta(&ctx) {
                            Ok(d) => {
                                self.w_hat += d;
                                self.deltas.push(d);
                                dw = Some(d);
                            }
                            Err(e) => {
                                self.fault = Some(e.to_string());
                                stop = true;
                            }
                        },
                        Decider::Cloned { policy, class } => match policy.forward_probability(&window, self.substance, *class) {
                            Ok(p) => stop = p < 0.5,
                            Err(e) => {
                                self.fault = Some(e.to_string());
                                stop = true;
                            }
                        },
                    }
                }
                if let Decider::Threshold { w_stop, .. } = self.decider {
                    stop |= self.w_hat >= w_stop;
                }
                if !stop && obs.angle >= self.max_angle {
                    self.exhausted = true;
                    stop = true;
                }
                if stop {
                    self.retract(obs.step);
                }
            }
            Phase::Retract => {
                if obs.angle <= 0.0 {
                    self.phase = Phase::Settle;
                    self.settle_since = obs.t;
                }
            }
            Phase::Settle => {
                if obs.t - self.settle_since >= self.settle - 1e-9 {
                    self.phase = Phase::Done;
                }
            }
            Phase::Done => {}
        }
        let cmd = match self.phase {
            Phase::Forward => WristCommand::Forward,
            Phase::Retract => WristCommand::Backward,
            Phase::Settle | Phase::Done => WristCommand::Hold,
        };
        (cmd, dw)
    }
}

/// Longest transport delay plus three times the longest stream inertia.
pub fn settle_horizon(catalog: &Catalog) -> f64 {
    catalog.max_transport_delay() + 3.0 * catalog.max_stream_inertia()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PourOptions {
    pub max_seconds: f64,
    /// Overrides [`settle_horizon`].
    pub settle: Option<f64>,
}

impl Default for PourOptions {
    fn default() -> Self {
        PourOptions { max_seconds: MAX_POUR_SECONDS, settle: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PourResult {
    pub substance: Substance,
    pub seed: u64,
    pub target: f64,
    pub w_stop: Option<f64>,
    /// Accumulated prediction when retraction began.
    pub w_hat_at_retract: Option<f64>,
    pub final_true: f64,
    /// Prediction at retraction plus estimated overpour; absent for the
    /// cloned policy.
    pub final_predicted: Option<f64>,
    pub error: f64,
    pub signed_error: f64,
    /// Reached the maximum angle before the stop condition.
    pub exhausted: bool,
    /// Predictor failure that forced a safe stop.
    pub fault: Option<String>,
    pub timed_out: bool,
    pub retract_step: Option<u64>,
    pub deltas: Vec<f64>,
    pub log: Vec<StepLog>,
    pub trial: Trial,
}

impl PourResult {
    /// `t,phase,angle,dw_hat,w_hat,scale_true,scale_read`; `dw_hat` is empty
    /// on ticks without an accumulated window.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("t,phase,angle,dw_hat,w_hat,scale_true,scale_read\n");
        for r in &self.log {
            let dw = r.dw_hat.map(|d| format!("{d:?}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:.2},{},{:?},{},{:?},{:?},{:?}",
                r.t,
                r.phase.as_str(),
                r.angle,
                dw,
                r.w_hat,
                r.scale_true,
                r.scale_read
            );
        }
        s
    }
}

/// Runs one closed-loop pour to completion. Deterministic for a given setup.
pub fn run_pour(catalog: &Catalog, setup: &PourSetup, target: f64, brain: Brain, opts: &PourOptions) -> Result<PourResult> {
    let (decider, bounds, owe) = match brain {
        Brain::Model { predictor, owe } => {
            let w_stop = match owe {
                _ if target <= 0.0 => 0.0,
                Some(c) => stop_weight(c, target)?,
                None => target,
            };
            (Decider::Threshold { predictor, w_stop }, predictor.bounds(setup.substance)?.copied(), owe)
        }
        Brain::Cloned(policy) => {
            let class = TargetClass::from_grams(target).ok_or(ControlError::UnknownTarget(target))?;
            let b = *policy.bounds.get(&setup.substance).ok_or(ControlError::NoBounds(setup.substance))?;
            (Decider::Cloned { policy, class }, Some(b), None)
        }
    };
    let settle = opts.settle.unwrap_or_else(|| settle_horizon(catalog));
    let mut ctrl = Controller::new(decider, setup.substance, bounds, catalog.plant.max_angle, settle);
    let mut sim = setup.start(catalog);
    let max_steps = (opts.max_seconds / catalog.plant.dt).round() as u64;
    let mut log = Vec::new();
    let mut scale_read = 0.0;
    let mut timed_out = true;
    for _ in 0..=max_steps {
        let obs = sim.sense();
        if let Some(r) = obs.scale {
            scale_read = r;
        }
        let (cmd, dw) = ctrl.tick(&obs, sim.truth());
        log.push(StepLog {
            t: obs.t,
            phase: ctrl.phase,
            angle: obs.angle,
            dw_hat: dw,
            w_hat: ctrl.w_hat,
            scale_true: sim.truth().last().map(|s| s.scale_true).unwrap_or(0.0),
            scale_read,
        });
        if ctrl.phase == Phase::Done {
            timed_out = false;
            break;
        }
        sim.apply(cmd);
    }
    let final_true = sim.state.scale_true();
    let w_stop = ctrl.w_stop();
    let final_predicted = match ctrl.decider {
        Decider::Threshold { .. } => {
            let w = ctrl.w_hat_at_retract.unwrap_or(ctrl.w_hat);
            Some(w + owe.map(|c| c.overpour(w)).unwrap_or(0.0))
        }
        Decider::Cloned { .. } => None,
    };
    let record = sim.into_record();
    Ok(PourResult {
        substance: setup.substance,
        seed: setup.seed,
        target,
        w_stop,
        w_hat_at_retract: ctrl.w_hat_at_retract,
        final_true,
        final_predicted,
        error: (final_true - target).abs(),
        signed_error: final_true - target,
        exhausted: ctrl.exhausted,
        fault: ctrl.fault,
        timed_out,
        retract_step: ctrl.retract_step,
        deltas: ctrl.deltas,
        log,
        trial: record.trial,
    })
}
