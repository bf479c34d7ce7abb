use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plant::band_coverage;
use super::{mix_seed, Catalog, GraspNoise};
use crate::signals::{CapacitanceFrame, Container, Substance, Trial, TrialKind, DEFAULT_FILL_G, ELECTRODES, FRAME_DT, GRASP_FRAMES};

/// One 2 s gripper-closing cycle around `container` holding `substance`.
///
/// Each electrode rises from the open-gripper ambient level toward an
/// asymptote set by the container baseline plus the substance's coupling
/// over the filled height bands. `day_seed` selects an additive drift shared
/// by every signature of that session.
pub fn grasp_signature(
    catalog: &Catalog,
    container: Container,
    substance: Substance,
    day_seed: i64,
    iteration_seed: u64,
    noise: &GraspNoise,
) -> Trial {
    let cp = catalog.container(container);
    let sp = catalog.substance(substance);
    let pl = &catalog.plant;

    let mut day_rng = ChaCha8Rng::seed_from_u64(mix_seed(day_seed as u64, 0x6DA5));
    let drift: [f64; ELECTRODES] = std::array::from_fn(|_| {
        let z: f64 = StandardNormal.sample(&mut day_rng);
        noise.day_drift_sigma * z
    });

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(iteration_seed, 0x64A5 ^ day_seed as u64));
    let cov = band_coverage(pl, sp.grasp_fill, 0.0);
    let gain = sp.capacitance_gain * cp.thickness_factor;
    let asymptote: [f64; ELECTRODES] = std::array::from_fn(|e| {
        let z: f64 = StandardNormal.sample(&mut rng);
        (cp.baseline[e] + gain * pl.electrode_sensitivity[e] * cov[e]) * (1.0 + noise.gain_jitter * z)
    });

    let norm = 1.0 - (-cp.close_rate).exp();
    let frames = (0..GRASP_FRAMES)
        .map(|k| {
            let u = (k + 1) as f64 / GRASP_FRAMES as f64;
            let closing = (1.0 - (-cp.close_rate * u).exp()) / norm;
            let readings = std::array::from_fn(|e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (noise.ambient + drift[e] + closing * asymptote[e] + noise.reading_sigma * z).max(0.0)
            });
            CapacitanceFrame { t: k as f64 * FRAME_DT, readings }
        })
        .collect();

    Trial {
        kind: TrialKind::Grasp,
        substance,
        container: Some(container),
        frames,
        scale: vec![],
        day_seed,
        initial_fill: DEFAULT_FILL_G,
    }
}
