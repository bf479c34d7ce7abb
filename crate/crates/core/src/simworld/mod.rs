//! Deterministic stand-in for the physical gripper, cup and scale.
//!
//! The plant is lumped: flow is gated by tilt past an onset angle that rises
//! as the container empties, poured mass travels to the scale as discrete
//! parcels after a transport delay, and a retracting stream decays linearly
//! over the substance's inertia time instead of stopping at once. Masses are
//! kept in integer nanograms so conservation is exact.

mod catalog;
mod grasp;
mod plant;
mod scripted;

pub use catalog::{Catalog, ContainerParams, GraspNoise, PlantParams, SubstanceParams, MIN_TRANSPORT_DELAY};
pub use grasp::grasp_signature;
pub use plant::{flow_rate, Plant, SimState, WristCommand, NG_PER_G};
pub use scripted::{
    run_scripted_pour, run_scripted_pour_recorded, AlwaysForward, Hold, Observation, Policy, PourRecord, PourSetup, PourSim,
    StopAndGo, TruthSample,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("catalog: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// splitmix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
