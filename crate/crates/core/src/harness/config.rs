use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::de::{self, DeserializeOwned};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{DatasetConfig, ForestConfig};
use crate::control::{BcTrainConfig, BC_TARGETS};
use crate::owe::CollectConfig;
use crate::pwp::PwpTrainConfig;
use crate::signals::{Container, ElectrodeSet, Substance};
use crate::simworld::{mix_seed, Catalog};

/// Which controller a pour runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Offset-trained predictor plus overpour correction.
    #[default]
    Full,
    /// Same predictor, stopping at the raw target.
    NoOwe,
    /// Predictor trained on the squared error alone, with its own correction.
    NoOffsets,
    /// Behavior-cloned direction policy.
    Bc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoOwe, Variant::NoOffsets, Variant::Bc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoOwe => "no_owe",
            Variant::NoOffsets => "no_offsets",
            Variant::Bc => "bc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .with_context(|| format!("unknown variant `{s}` (expected full, no_owe, no_offsets or bc)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub dataset: DatasetConfig,
    pub forest: ForestConfig,
    pub electrode_subsets: Vec<ElectrodeSet>,
    pub class_counts: Vec<usize>,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        let subsets = [10, 6, 2, 1].iter().filter_map(|&n| ElectrodeSet::canonical(n)).collect();
        ClassificationConfig {
            dataset: DatasetConfig::default(),
            forest: ForestConfig::default(),
            electrode_subsets: subsets,
            class_counts: vec![9, 27, 54, 81],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PouringConfig {
    /// Scripted training pours per substance.
    pub training_pours: usize,
    pub train_frac: f64,
    #[serde(deserialize_with = "over_pwp_default")]
    pub pwp: PwpTrainConfig,
    pub collect: CollectConfig,
    pub eval_targets: Vec<f64>,
    pub eval_reps: usize,
    pub variants: Vec<Variant>,
    /// Extra full-controller runs with a predictor retrained on each subset.
    pub electrode_subsets: Vec<ElectrodeSet>,
    pub bc_demos_per_class: usize,
    #[serde(deserialize_with = "over_bc_default")]
    pub bc: BcTrainConfig,
    /// Target of the per-substance trace pours.
    pub trace_target: f64,
    /// Raises every transport delay to at least this many seconds.
    pub min_transport_delay: Option<f64>,
}

impl Default for PouringConfig {
    fn default() -> Self {
        PouringConfig {
            training_pours: 10,
            train_frac: 0.8,
            pwp: PwpTrainConfig { width: 64, epochs: 40, lr: 3e-4, ..PwpTrainConfig::default() },
            collect: CollectConfig::default(),
            eval_targets: BC_TARGETS.to_vec(),
            eval_reps: 10,
            variants: Variant::ALL.to_vec(),
            electrode_subsets: [6, 2].iter().filter_map(|&n| ElectrodeSet::canonical(n)).collect(),
            bc_demos_per_class: 5,
            bc: BcTrainConfig { width: 64, epochs: 20, lr: 3e-4, ..BcTrainConfig::default() },
            trace_target: 100.0,
            min_transport_delay: None,
        }
    }
}

/// Lays the keys present in `partial` over the serialized `base`, so a
/// section that sets one field keeps the suite's values for the rest.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, partial: toml::Table) -> std::result::Result<T, String> {
    fn merge(into: &mut toml::Table, from: toml::Table) {
        for (k, v) in from {
            match (into.get_mut(&k), v) {
                (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
                (_, v) => {
                    into.insert(k, v);
                }
            }
        }
    }
    let mut table = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    merge(&mut table, partial);
    table.try_into().map_err(|e: toml::de::Error| e.to_string())
}

fn over_pwp_default<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<PwpTrainConfig, D::Error> {
    overlay(&PouringConfig::default().pwp, toml::Table::deserialize(d)?).map_err(de::Error::custom)
}

fn over_bc_default<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BcTrainConfig, D::Error> {
    overlay(&PouringConfig::default().bc, toml::Table::deserialize(d)?).map_err(de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PourOnceConfig {
    pub substance: Substance,
    pub target: f64,
    pub day_seed: i64,
}

impl Default for PourOnceConfig {
    fn default() -> Self {
        PourOnceConfig { substance: Substance::Water, target: 100.0, day_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedPolicy {
    #[default]
    Forward,
    StopAndGo,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    #[default]
    Pour,
    Grasp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimTrialConfig {
    pub kind: SimKind,
    pub substance: Substance,
    pub container: Container,
    pub policy: ScriptedPolicy,
    pub duration: f64,
    pub day_seed: i64,
}

impl Default for SimTrialConfig {
    fn default() -> Self {
        SimTrialConfig {
            kind: SimKind::Pour,
            substance: Substance::Water,
            container: Container::Pp,
            policy: ScriptedPolicy::Forward,
            duration: 20.0,
            day_seed: 0,
        }
    }
}

/// Everything one CLI invocation needs. Every field has a default, so an
/// empty file is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    /// Simulator catalog TOML; the bundled catalog when absent.
    pub catalog: Option<PathBuf>,
    pub variant: Variant,
    pub electrodes: ElectrodeSet,
    pub out: Option<PathBuf>,
    pub classification: ClassificationConfig,
    pub pouring: PouringConfig,
    pub pour_once: PourOnceConfig,
    pub sim_trial: SimTrialConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id: "default".into(),
            seed: 0,
            catalog: None,
            variant: Variant::Full,
            electrodes: ElectrodeSet::ALL,
            out: None,
            classification: ClassificationConfig::default(),
            pouring: PouringConfig::default(),
            pour_once: PourOnceConfig::default(),
            sim_trial: SimTrialConfig::default(),
        }
    }
}

/// Named sub-seeds derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PwpData,
    PwpInit,
    OweCollect,
    Evaluation,
    BcDemos,
    BcInit,
    GraspData,
    Forest,
    ClassSubsets,
    SimTrial,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::PwpData,
        Stage::PwpInit,
        Stage::OweCollect,
        Stage::Evaluation,
        Stage::BcDemos,
        Stage::BcInit,
        Stage::GraspData,
        Stage::Forest,
        Stage::ClassSubsets,
        Stage::SimTrial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PwpData => "pwp_data",
            Stage::PwpInit => "pwp_init",
            Stage::OweCollect => "owe_collect",
            Stage::Evaluation => "evaluation",
            Stage::BcDemos => "bc_demos",
            Stage::BcInit => "bc_init",
            Stage::GraspData => "grasp_data",
            Stage::Forest => "forest",
            Stage::ClassSubsets => "class_subsets",
            Stage::SimTrial => "sim_trial",
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing experiment config")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pouring;
        if p.training_pours < 2 {
            bail!("pouring.training_pours must be at least 2");
        }
        if p.eval_reps == 0 || p.eval_targets.is_empty() {
            bail!("pouring needs at least one evaluation target and repetition");
        }
        if p.collect.reps == 0 || p.collect.targets.is_empty() {
            bail!("pouring.collect needs at least one target and repetition");
        }
        if p.bc_demos_per_class < 2 && p.variants.contains(&Variant::Bc) {
            bail!("pouring.bc_demos_per_class must be at least 2 for a train/validation split");
        }
        if p.pwp.epochs == 0 || p.bc.epochs == 0 {
            bail!("epoch counts must be at least 1");
        }
        let c = &self.classification;
        if c.dataset.iterations == 0 || c.forest.n_trees == 0 {
            bail!("classification needs at least one iteration and one tree");
        }
        if self.sim_trial.duration <= 0.0 {
            bail!("sim_trial.duration must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        mix_seed(self.seed, 0xC0DE_0000 + stage as u64)
    }

    pub fn catalog(&self) -> Result<Catalog> {
        let mut cat = match &self.catalog {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading catalog {}", p.display()))?;
                Catalog::from_toml(&text).with_context(|| format!("catalog {}", p.display()))?
            }
            None => Catalog::default(),
        };
        if let Some(d) = self.pouring.min_transport_delay {
            cat = cat.with_min_transport_delay(d);
        }
        Ok(cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip_and_stable_hash() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 9;
        cfg.pouring.eval_reps = 2;
        cfg.classification.electrode_subsets = vec![ElectrodeSet::canonical(2).unwrap()];
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_ne!(ExperimentConfig::default().hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_sections_and_rejections() {
        let cfg = ExperimentConfig::from_toml(
            "variant = \"no_owe\"\nelectrodes = \"1,3,5,6,8,10\"\n[pouring]\neval_reps = 3\n[pouring.pwp]\nepochs = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::NoOwe);
        assert_eq!(cfg.electrodes, ElectrodeSet::canonical(6).unwrap());
        assert_eq!(cfg.pouring.eval_reps, 3);
        assert_eq!(cfg.pouring.pwp.epochs, 5);
        assert_eq!(cfg.pouring.pwp.width, 64);
        assert_eq!(cfg.pouring.pwp.lr, 3e-4);
        let bc = ExperimentConfig::from_toml("[pouring.bc]\nepochs = 3\n").unwrap().pouring.bc;
        assert_eq!((bc.epochs, bc.width), (3, 64));
        assert!(ExperimentConfig::from_toml("variant = \"fancy\"").is_err());
        assert!(ExperimentConfig::from_toml("[pouring]\neval_reps = 0").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn stage_seeds_are_distinct() {
        let cfg = ExperimentConfig::default();
        let mut s: Vec<u64> = Stage::ALL.iter().map(|&st| cfg.stage_seed(st)).collect();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), Stage::ALL.len());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("x".parse::<Variant>().is_err());
    }
}
