use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, Plant, SimState, WristCommand};
use crate::signals::{CapacitanceFrame, Container, ScaleSample, Substance, Trial, TrialKind, SCALE_DT};

/// What a controller may see at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub t: f64,
    pub angle: f64,
    pub frame: CapacitanceFrame,
    /// Scale reading when this tick falls on the 10 Hz grid.
    pub scale: Option<f64>,
}

pub trait Policy {
    fn command(&mut self, obs: &Observation) -> WristCommand;
}

impl<F: FnMut(&Observation) -> WristCommand> Policy for F {
    fn command(&mut self, obs: &Observation) -> WristCommand {
        self(obs)
    }
}

pub struct AlwaysForward;

impl Policy for AlwaysForward {
    fn command(&mut self, _: &Observation) -> WristCommand {
        WristCommand::Forward
    }
}

pub struct Hold;

impl Policy for Hold {
    fn command(&mut self, _: &Observation) -> WristCommand {
        WristCommand::Hold
    }
}

/// Forward sweep interrupted by short seeded retractions: Forward for
/// 1.5 to 3 s, then Backward for 0.2 to 0.5 s, repeated.
pub struct StopAndGo {
    rng: ChaCha8Rng,
    backward: bool,
    left: u32,
}

impl StopAndGo {
    pub fn new(seed: u64) -> Self {
        let mut p = StopAndGo { rng: ChaCha8Rng::seed_from_u64(seed), backward: true, left: 0 };
        p.advance();
        p
    }

    fn advance(&mut self) {
        self.backward = !self.backward;
        let secs = if self.backward { self.rng.random_range(0.2..0.5) } else { self.rng.random_range(1.5..3.0) };
        self.left = (secs * 100.0f64).round() as u32;
    }
}

impl Policy for StopAndGo {
    fn command(&mut self, _: &Observation) -> WristCommand {
        while self.left == 0 {
            self.advance();
        }
        self.left -= 1;
        if self.backward { WristCommand::Backward } else { WristCommand::Forward }
    }
}

/// Ground truth at one tick, recorded before the tick's command is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub angle: f64,
    pub remaining: f64,
    pub in_flight: f64,
    pub scale_true: f64,
    pub stream: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PourRecord {
    pub trial: Trial,
    pub truth: Vec<TruthSample>,
}

/// A pour in progress: alternate [`PourSim::sense`] and [`PourSim::apply`].
pub struct PourSim<'a> {
    pub plant: Plant<'a>,
    pub state: SimState,
    substance: Substance,
    container: Container,
    day_seed: i64,
    scale_every: u64,
    frames: Vec<CapacitanceFrame>,
    scale: Vec<ScaleSample>,
    truth: Vec<TruthSample>,
}

impl<'a> PourSim<'a> {
    pub fn new(catalog: &'a Catalog, substance: Substance, container: Container, initial_fill: f64, seed: u64, day_seed: i64) -> Self {
        let plant = Plant::new(catalog, substance, container);
        let state = plant.init(initial_fill, seed, day_seed);
        let scale_every = (SCALE_DT / catalog.plant.dt).round().max(1.0) as u64;
        PourSim {
            plant,
            state,
            substance,
            container,
            day_seed,
            scale_every,
            frames: Vec::new(),
            scale: Vec::new(),
            truth: Vec::new(),
        }
    }

    pub fn sense(&mut self) -> Observation {
        let s = &mut self.state;
        let t = s.t();
        let readings = self.plant.emit_capacitance(s);
        let frame = CapacitanceFrame { t, readings };
        let scale = s.step_index().is_multiple_of(self.scale_every).then(|| self.plant.emit_scale(s));
        self.frames.push(frame);
        if let Some(w) = scale {
            self.scale.push(ScaleSample { t, weight: w });
        }
        self.truth.push(TruthSample {
            t,
            angle: s.angle,
            remaining: s.remaining(),
            in_flight: s.in_flight(),
            scale_true: s.scale_true(),
            stream: s.stream,
        });
        Observation { step: s.step_index(), t, angle: s.angle, frame, scale }
    }

    pub fn apply(&mut self, cmd: WristCommand) {
        self.plant.step(&mut self.state, cmd);
    }

    pub fn truth(&self) -> &[TruthSample] {
        &self.truth
    }

    pub fn into_record(self) -> PourRecord {
        PourRecord {
            trial: Trial {
                kind: TrialKind::Pour,
                substance: self.substance,
                container: Some(self.container),
                frames: self.frames,
                scale: self.scale,
                day_seed: self.day_seed,
                initial_fill: self.state.initial_fill(),
            },
            truth: self.truth,
        }
    }
}

/// Where, with what, and under which seeds a pour runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PourSetup {
    pub substance: Substance,
    pub container: Container,
    pub initial_fill: f64,
    pub seed: u64,
    pub day_seed: i64,
}

impl PourSetup {
    /// PP container, 150 g, day 0.
    pub fn new(substance: Substance, seed: u64) -> Self {
        PourSetup { substance, container: Container::Pp, initial_fill: crate::signals::DEFAULT_FILL_G, seed, day_seed: 0 }
    }

    pub fn start<'a>(&self, catalog: &'a Catalog) -> PourSim<'a> {
        PourSim::new(catalog, self.substance, self.container, self.initial_fill, self.seed, self.day_seed)
    }
}

/// Runs `policy` open-loop for `duration` seconds and records everything.
pub fn run_scripted_pour_recorded(catalog: &Catalog, setup: &PourSetup, policy: &mut dyn Policy, duration: f64) -> PourRecord {
    let steps = (duration / catalog.plant.dt).round() as u64;
    let mut sim = setup.start(catalog);
    for k in 0..=steps {
        let obs = sim.sense();
        if k < steps {
            let cmd = policy.command(&obs);
            sim.apply(cmd);
        }
    }
    sim.into_record()
}

pub fn run_scripted_pour(catalog: &Catalog, setup: &PourSetup, policy: &mut dyn Policy, duration: f64) -> Trial {
    run_scripted_pour_recorded(catalog, setup, policy, duration).trial
}
