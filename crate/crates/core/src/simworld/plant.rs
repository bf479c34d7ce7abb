use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mix_seed, Catalog, ContainerParams, SubstanceParams};
use crate::signals::{Container, Substance, ELECTRODES, PANEL_ELECTRODES};

pub const NG_PER_G: f64 = 1e9;

fn to_ng(g: f64) -> i64 {
    (g * NG_PER_G).round() as i64
}

fn to_g(ng: i64) -> f64 {
    ng as f64 / NG_PER_G
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WristCommand {
    Forward,
    Backward,
    Hold,
}

/// Flow in g/s for a tilt and fill, before per-trial scaling.
///
/// `burst` in [0, 1] is the avalanche level of a granular substance; it is
/// ignored for liquids. Granular peaks reach `10 * peak_flow` only at
/// `burst = 1`.
pub fn flow_rate(p: &SubstanceParams, fill_ref_g: f64, taper_g: f64, angle: f64, remaining: f64, burst: f64) -> f64 {
    if remaining <= 0.0 || angle <= 0.0 {
        return 0.0;
    }
    let poured_frac = (1.0 - remaining / fill_ref_g).clamp(0.0, 1.0);
    let onset = p.onset_angle + p.onset_span * poured_frac.powf(p.onset_exponent);
    let e = (angle - onset) / p.ramp_width;
    if e <= 0.0 {
        return 0.0;
    }
    let e = e.min(1.0);
    let ramp = e * e * (3.0 - 2.0 * e);
    let avail = (remaining / taper_g).min(1.0);
    let peak = 10.0 * p.peak_flow;
    if p.granular && p.avalanche_gain > 0.0 {
        let g = p.avalanche_gain;
        let m = 1.0 + g * (2.0 * burst.clamp(0.0, 1.0) - 1.0);
        peak / (1.0 + g) * ramp * avail * m
    } else {
        peak * ramp * avail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Parcel {
    arrival: f64,
    mass_ng: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Decay {
    from: f64,
    start: f64,
}

/// Full plant state. `Clone` gives an independent copy including the RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    step: u64,
    dt: f64,
    pub angle: f64,
    remaining_ng: i64,
    initial_ng: i64,
    scale_ng: i64,
    in_flight: VecDeque<Parcel>,
    /// Current stream leaving the lip, g/s.
    pub stream: f64,
    decay: Option<Decay>,
    pub burst: f64,
    /// Per-trial flow multiplier (pour-to-pour variability).
    pub flow_scale: f64,
    drift: [f64; ELECTRODES],
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn t(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn remaining(&self) -> f64 {
        to_g(self.remaining_ng)
    }

    pub fn scale_true(&self) -> f64 {
        to_g(self.scale_ng)
    }

    pub fn in_flight(&self) -> f64 {
        to_g(self.in_flight.iter().map(|p| p.mass_ng).sum())
    }

    pub fn initial_fill(&self) -> f64 {
        to_g(self.initial_ng)
    }

    /// Source + in-flight + scale, exact in nanograms.
    pub fn total_mass_ng(&self) -> i64 {
        self.remaining_ng + self.scale_ng + self.in_flight.iter().map(|p| p.mass_ng).sum::<i64>()
    }

    pub fn total_mass(&self) -> f64 {
        self.remaining() + self.scale_true() + self.in_flight()
    }

    pub fn is_retracting(&self) -> bool {
        self.decay.is_some()
    }
}

/// One substance in one container under the catalog's plant constants.
#[derive(Debug, Clone, Copy)]
pub struct Plant<'a> {
    pub catalog: &'a Catalog,
    pub substance: &'a SubstanceParams,
    pub container: &'a ContainerParams,
}

impl<'a> Plant<'a> {
    pub fn new(catalog: &'a Catalog, substance: Substance, container: Container) -> Self {
        Plant { catalog, substance: catalog.substance(substance), container: catalog.container(container) }
    }

    /// Fresh upright state. `seed` drives per-trial randomness, `day_seed`
    /// the session drift shared across trials of one day.
    pub fn init(&self, initial_fill: f64, seed: u64, day_seed: i64) -> SimState {
        let pl = &self.catalog.plant;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
        let jitter: f64 = StandardNormal.sample(&mut rng);
        let flow_scale = (1.0 + pl.flow_jitter * jitter).max(0.5);
        let mut day_rng = ChaCha8Rng::seed_from_u64(mix_seed(day_seed as u64, 0xD417));
        let drift = std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut day_rng);
            pl.pour_drift_sigma * z
        });
        let initial_ng = to_ng(initial_fill);
        SimState {
            step: 0,
            dt: pl.dt,
            angle: 0.0,
            remaining_ng: initial_ng,
            initial_ng,
            scale_ng: 0,
            in_flight: VecDeque::new(),
            stream: 0.0,
            decay: None,
            burst: 0.0,
            flow_scale,
            drift,
            rng,
        }
    }

    pub fn flow_now(&self, s: &SimState) -> f64 {
        let pl = &self.catalog.plant;
        s.flow_scale * flow_rate(self.substance, pl.fill_ref_g, pl.taper_g, s.angle, s.remaining(), s.burst)
    }

    /// Advances one tick of `plant.dt` seconds.
    pub fn step(&self, s: &mut SimState, cmd: WristCommand) {
        let pl = &self.catalog.plant;
        let p = self.substance;
        let dt = pl.dt;
        let t0 = s.t();

        s.angle = match cmd {
            WristCommand::Forward => (s.angle + pl.wrist_speed * dt).min(pl.max_angle),
            WristCommand::Backward => (s.angle - pl.wrist_speed * dt).max(0.0),
            WristCommand::Hold => s.angle,
        };

        let geometric = self.flow_now(s);
        s.stream = match cmd {
            WristCommand::Backward => {
                let d = *s.decay.get_or_insert(Decay { from: s.stream, start: t0 });
                let envelope = if p.stream_inertia > 0.0 {
                    d.from * (1.0 - (t0 + dt - d.start) / p.stream_inertia).max(0.0)
                } else {
                    0.0
                };
                geometric.min(envelope).max(0.0)
            }
            _ => {
                s.decay = None;
                geometric
            }
        };

        let out_ng = to_ng(s.stream * dt).min(s.remaining_ng).max(0);
        s.step += 1;
        let t1 = s.t();
        if out_ng > 0 {
            s.remaining_ng -= out_ng;
            s.in_flight.push_back(Parcel { arrival: t1 + p.transport_delay, mass_ng: out_ng });
        }
        while let Some(front) = s.in_flight.front() {
            if front.arrival <= t1 + 1e-9 {
                s.scale_ng += front.mass_ng;
                s.in_flight.pop_front();
            } else {
                break;
            }
        }

        if p.granular && p.avalanche_gain > 0.0 {
            s.burst *= (-dt / pl.avalanche_decay).exp();
            if s.stream > 0.0 && s.rng.random::<f64>() < pl.avalanche_rate * dt {
                let level = 0.5 + 0.5 * s.rng.random::<f64>();
                s.burst = s.burst.max(level);
            }
        }
    }

    /// Fill coverage of every electrode's height band.
    pub fn coverage(&self, s: &SimState) -> [f64; ELECTRODES] {
        let pl = &self.catalog.plant;
        let fill = s.remaining() / pl.capacity_g;
        band_coverage(pl, fill, s.angle)
    }

    pub fn emit_capacitance(&self, s: &mut SimState) -> [f64; ELECTRODES] {
        let pl = &self.catalog.plant;
        let cov = self.coverage(s);
        let gain = self.substance.capacitance_gain * self.container.thickness_factor;
        std::array::from_fn(|e| {
            let z: f64 = if pl.pour_noise_sigma > 0.0 { StandardNormal.sample(&mut s.rng) } else { 0.0 };
            let r = self.container.baseline[e]
                + gain * pl.electrode_sensitivity[e] * cov[e]
                + s.drift[e]
                + pl.pour_noise_sigma * z;
            r.max(0.0)
        })
    }

    /// 1 g quantized reading, with a ±1 g error drawn with
    /// probability `scale_noise_prob`.
    pub fn emit_scale(&self, s: &mut SimState) -> f64 {
        let pl = &self.catalog.plant;
        let noise = if pl.scale_noise_prob > 0.0 && s.rng.random::<f64>() < pl.scale_noise_prob {
            if s.rng.random::<bool>() { 1.0 } else { -1.0 }
        } else {
            0.0
        };
        quantize_scale(s.scale_true(), noise)
    }
}

pub(crate) fn quantize_scale(true_g: f64, noise_draw: f64) -> f64 {
    true_g.round() + noise_draw
}

/// Bands are stacked bottom (0) to top (4) on each panel. Tilting lowers the
/// wall level seen by each panel, the right (pouring) panel more strongly.
pub(crate) fn band_coverage(pl: &super::PlantParams, fill: f64, angle: f64) -> [f64; ELECTRODES] {
    let tilt = (angle.to_radians() / 2.0).sin();
    std::array::from_fn(|e| {
        let (panel, band) = (e / PANEL_ELECTRODES, e % PANEL_ELECTRODES);
        let coupling = if panel == 0 { pl.tilt_coupling_left } else { pl.tilt_coupling_right };
        let level = fill - coupling * tilt;
        let x = level * PANEL_ELECTRODES as f64 - band as f64 - 0.5;
        0.5 * (1.0 + (pl.band_softness * x).tanh())
    })
}
