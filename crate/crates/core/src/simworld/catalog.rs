use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, SimError};
use crate::signals::{Container, Substance, ELECTRODES};

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.toml");

/// Minimum physical lip-to-scale delay.
pub const MIN_TRANSPORT_DELAY: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstanceParams {
    #[serde(skip)]
    pub name: Option<Substance>,
    /// Grams per 0.1 s at full tilt with ample fill.
    pub peak_flow: f64,
    /// Angle at which a full container starts to pour.
    pub onset_angle: f64,
    /// Extra tilt needed once the container is empty.
    pub onset_span: f64,
    pub onset_exponent: f64,
    /// Tilt past onset over which flow ramps to its peak.
    pub ramp_width: f64,
    pub transport_delay: f64,
    pub stream_inertia: f64,
    pub granular: bool,
    pub avalanche_gain: f64,
    pub capacitance_gain: f64,
    /// Fill fraction reached by a grasp-catalog sample of this substance.
    pub grasp_fill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerParams {
    #[serde(skip)]
    pub name: Option<Container>,
    pub baseline: [f64; ELECTRODES],
    pub thickness_factor: f64,
    /// Shape constant of the grasp closing profile.
    pub close_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub max_angle: f64,
    pub wrist_speed: f64,
    pub dt: f64,
    pub capacity_g: f64,
    pub fill_ref_g: f64,
    pub taper_g: f64,
    pub tilt_coupling_left: f64,
    pub tilt_coupling_right: f64,
    pub band_softness: f64,
    pub electrode_sensitivity: [f64; ELECTRODES],
    pub pour_noise_sigma: f64,
    pub pour_drift_sigma: f64,
    pub scale_noise_prob: f64,
    pub avalanche_rate: f64,
    pub avalanche_decay: f64,
    pub flow_jitter: f64,
}

/// Noise knobs for grasp-cycle signatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspNoise {
    pub ambient: f64,
    pub reading_sigma: f64,
    pub gain_jitter: f64,
    pub day_drift_sigma: f64,
}

impl GraspNoise {
    pub fn noise_free(self) -> GraspNoise {
        GraspNoise { reading_sigma: 0.0, gain_jitter: 0.0, day_drift_sigma: 0.0, ..self }
    }

    pub fn scaled(self, k: f64) -> GraspNoise {
        GraspNoise {
            reading_sigma: self.reading_sigma * k,
            gain_jitter: self.gain_jitter * k,
            day_drift_sigma: self.day_drift_sigma * k,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub plant: PlantParams,
    pub grasp: GraspNoise,
    #[serde(rename = "substance")]
    pub substances: BTreeMap<Substance, SubstanceParams>,
    #[serde(rename = "container")]
    pub containers: BTreeMap<Container, ContainerParams>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_toml(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

impl Catalog {
    pub fn from_toml(text: &str) -> Result<Catalog> {
        let mut cat: Catalog = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        for (s, p) in cat.substances.iter_mut() {
            p.name = Some(*s);
        }
        for (c, p) in cat.containers.iter_mut() {
            p.name = Some(*c);
        }
        cat.validate()?;
        Ok(cat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Catalog> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Catalog::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("catalog serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        let pl = &self.plant;
        if !(pl.max_angle > 0.0 && pl.max_angle <= 180.0) || pl.wrist_speed <= 0.0 || pl.dt <= 0.0 {
            return bad("plant: bad angle/speed/dt".into());
        }
        if pl.capacity_g <= 0.0 || pl.fill_ref_g <= 0.0 {
            return bad("plant: capacities must be positive".into());
        }
        for s in Substance::ALL {
            let Some(p) = self.substances.get(s) else {
                return bad(format!("missing substance `{s}`"));
            };
            if p.peak_flow <= 0.0 {
                return bad(format!("{s}: peak_flow must be positive"));
            }
            if !(p.onset_angle > 0.0 && p.onset_angle < pl.max_angle) {
                return bad(format!("{s}: onset_angle outside (0, {})", pl.max_angle));
            }
            if p.transport_delay < MIN_TRANSPORT_DELAY {
                return bad(format!("{s}: transport_delay below {MIN_TRANSPORT_DELAY} s"));
            }
            if p.stream_inertia < 0.0 || p.ramp_width <= 0.0 || p.avalanche_gain < 0.0 || p.avalanche_gain >= 1.0 {
                return bad(format!("{s}: bad inertia/ramp/avalanche"));
            }
        }
        for c in Container::ALL {
            let Some(p) = self.containers.get(c) else {
                return bad(format!("missing container `{c}`"));
            };
            if p.baseline.iter().any(|b| *b <= 0.0) {
                return bad(format!("{c}: baselines must be positive"));
            }
        }
        Ok(())
    }

    pub fn substance(&self, s: Substance) -> &SubstanceParams {
        &self.substances[&s]
    }

    pub fn container(&self, c: Container) -> &ContainerParams {
        &self.containers[&c]
    }

    /// Largest transport delay among the pouring substances.
    pub fn max_transport_delay(&self) -> f64 {
        crate::signals::POUR_SUBSTANCES
            .iter()
            .map(|s| self.substance(*s).transport_delay)
            .fold(0.0, f64::max)
    }

    pub fn max_stream_inertia(&self) -> f64 {
        crate::signals::POUR_SUBSTANCES
            .iter()
            .map(|s| self.substance(*s).stream_inertia)
            .fold(0.0, f64::max)
    }

    /// Copy with zero transport delay and zero stream inertia for every
    /// substance. Bypasses validation on purpose: the result is an
    /// idealized plant for bounding tests.
    pub fn without_delay_and_inertia(&self) -> Catalog {
        let mut c = self.clone();
        for p in c.substances.values_mut() {
            p.transport_delay = 0.0;
            p.stream_inertia = 0.0;
        }
        c
    }

    /// Copy with all sensor and plant randomness removed.
    pub fn noise_free(&self) -> Catalog {
        let mut c = self.clone();
        c.plant.pour_noise_sigma = 0.0;
        c.plant.pour_drift_sigma = 0.0;
        c.plant.scale_noise_prob = 0.0;
        c.plant.flow_jitter = 0.0;
        for p in c.substances.values_mut() {
            p.avalanche_gain = 0.0;
        }
        c.grasp = c.grasp.noise_free();
        c
    }

    /// Raises every transport delay to at least `min_delay`.
    pub fn with_min_transport_delay(&self, min_delay: f64) -> Catalog {
        let mut c = self.clone();
        for p in c.substances.values_mut() {
            p.transport_delay = p.transport_delay.max(min_delay);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_loads_and_round_trips() {
        let c = Catalog::default();
        assert_eq!(c.substances.len(), 9);
        assert_eq!(c.containers.len(), 9);
        let back = Catalog::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bundled_flow_anchors() {
        let c = Catalog::default();
        assert_eq!(c.substance(Substance::Rice).peak_flow, 10.2);
        assert_eq!(c.substance(Substance::Lentils).peak_flow, 8.2);
        for s in [Substance::Water, Substance::Vinegar, Substance::Oil] {
            let p = c.substance(s).peak_flow;
            assert!((5.0..=6.0).contains(&p), "{s}: {p}");
        }
        for s in crate::signals::POUR_SUBSTANCES {
            let d = c.substance(s).transport_delay;
            assert!((0.15..=0.35).contains(&d), "{s}: {d}");
        }
    }

    #[test]
    fn validation_rejects_short_delay() {
        let mut c = Catalog::default();
        c.substances.get_mut(&Substance::Water).unwrap().transport_delay = 0.1;
        assert!(c.validate().is_err());
        let text = Catalog::default().to_toml().replace("peak_flow = 5.8", "peak_flow = -1.0");
        assert!(Catalog::from_toml(&text).is_err());
    }
}
