//! Sensor data model shared by classification and pouring.
//!
//! A [`Trial`] holds one recorded episode: capacitance frames from the ten
//! gripper electrodes at 100 Hz and, for pours, the weighing-scale samples at
//! 10 Hz. Submodules cover the on-disk log format, grasp-cycle feature
//! vectors and the sliding windows consumed by the poured-weight predictor.

mod electrodes;
mod features;
mod log_format;
mod windows;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use electrodes::ElectrodeSet;
pub use features::{grasp_features, DiffStep, GraspFeature, Standardizer, GRASP_FEATURE_DIM};
pub use log_format::{load_trial, parse_trial, save_trial, write_trial};
pub use windows::{
    h_grid_indices, h_grid_windows, min_max_bounds, normalize_reading, pour_windows, window_count,
    ElectrodeBounds, WindowFeature, WINDOW_FRAMES, WINDOW_VALUES,
};

/// Electrodes per gripper (five per panel).
pub const ELECTRODES: usize = 10;
/// Electrodes on one panel.
pub const PANEL_ELECTRODES: usize = 5;
/// Capacitance sampling period in seconds (100 Hz).
pub const FRAME_DT: f64 = 0.01;
/// Scale sampling period in seconds (10 Hz).
pub const SCALE_DT: f64 = 0.1;
/// Window length used for poured-weight prediction, seconds.
pub const WINDOW_H: f64 = 0.1;
/// Frames in one grasp cycle (2 s at 100 Hz).
pub const GRASP_FRAMES: usize = 200;
/// Default source-container fill for pour trials, grams.
pub const DEFAULT_FILL_G: f64 = 150.0;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid trial: {0}")]
    Invalid(String),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// One 100 Hz capacitance sample. Indices 0-4 are the left panel
/// bottom-to-top, 5-9 the right (pouring-side) panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceFrame {
    pub t: f64,
    pub readings: [f64; ELECTRODES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub t: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialKind {
    Grasp,
    Pour,
}

impl TrialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKind::Grasp => "grasp",
            TrialKind::Pour => "pour",
        }
    }
}

impl FromStr for TrialKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "grasp" => Ok(TrialKind::Grasp),
            "pour" => Ok(TrialKind::Pour),
            other => Err(format!("unknown trial kind `{other}`")),
        }
    }
}

macro_rules! name_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            /// Position in [`Self::ALL`].
            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok($name::$var),)+
                    other => Err(format!(concat!("unknown ", stringify!($name), " `{}`"), other)),
                }
            }
        }
    };
}

name_enum!(
    /// The nine substances of the grasp catalog.
    Substance {
        Oats => "oats",
        Vinegar => "vinegar",
        Oil => "oil",
        Honey => "honey",
        Starch => "starch",
        Rice => "rice",
        Lentils => "lentils",
        Sugar => "sugar",
        Water => "water",
    }
);

name_enum!(
    /// The nine container materials of the grasp catalog.
    Container {
        Paper => "paper",
        Styrofoam => "styrofoam",
        Ceramic => "ceramic",
        Glass => "glass",
        Wood => "wood",
        Silicon => "silicon",
        Pet => "pet",
        Pp => "pp",
        Pc => "pc",
    }
);

/// Substances used for pouring, in label order `0..=4`.
pub const POUR_SUBSTANCES: [Substance; 5] = [
    Substance::Water,
    Substance::Vinegar,
    Substance::Oil,
    Substance::Rice,
    Substance::Lentils,
];

impl Substance {
    /// Pouring label in `0..5`, or `None` for grasp-only substances.
    pub fn pour_label(self) -> Option<usize> {
        POUR_SUBSTANCES.iter().position(|&s| s == self)
    }

    pub fn from_pour_label(label: usize) -> Option<Substance> {
        POUR_SUBSTANCES.get(label).copied()
    }

    pub fn is_granular(self) -> bool {
        matches!(
            self,
            Substance::Oats | Substance::Rice | Substance::Lentils | Substance::Sugar | Substance::Starch
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub kind: TrialKind,
    pub substance: Substance,
    pub container: Option<Container>,
    pub frames: Vec<CapacitanceFrame>,
    pub scale: Vec<ScaleSample>,
    pub day_seed: i64,
    pub initial_fill: f64,
}

impl Trial {
    /// Checks the data-model invariants; loading and simulation both go
    /// through this.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TrialKind::Grasp => {
                if self.container.is_none() {
                    return Err(SignalError::Invalid("grasp trial without container".into()));
                }
                if self.frames.len() != GRASP_FRAMES {
                    return Err(SignalError::Invalid(format!(
                        "grasp trial needs {GRASP_FRAMES} frames, has {}",
                        self.frames.len()
                    )));
                }
                if !self.scale.is_empty() {
                    return Err(SignalError::Invalid("grasp trial with scale samples".into()));
                }
            }
            TrialKind::Pour => {
                if self.substance.pour_label().is_none() {
                    return Err(SignalError::Invalid(format!(
                        "`{}` is not a pouring substance",
                        self.substance
                    )));
                }
            }
        }
        if !self.initial_fill.is_finite() || self.initial_fill < 0.0 {
            return Err(SignalError::Invalid(format!("bad fill {}", self.initial_fill)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.readings.iter().any(|r| !r.is_finite() || *r < 0.0) {
                return Err(SignalError::Invalid(format!("frame {i}: readings must be finite and non-negative")));
            }
            if i > 0 && f.t <= self.frames[i - 1].t {
                return Err(SignalError::Invalid(format!("frame {i}: timestamps not strictly increasing")));
            }
        }
        for (i, s) in self.scale.iter().enumerate() {
            if i > 0 && s.t <= self.scale[i - 1].t {
                return Err(SignalError::Invalid(format!("scale sample {i}: timestamps not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Duration spanned by the capacitance frames.
    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Readings of one electrode over the whole trial.
    pub fn electrode_series(&self, e: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.readings[e]).collect()
    }
}
