use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Stage};

/// Output directory that remembers every file written through it.
#[derive(Debug, Clone)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(p)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

/// `manifest.json`: what ran, with which configuration and seeds, and what
/// it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, outputs: &Outputs) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            experiment: cfg.id.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            seeds: Stage::ALL.iter().map(|&s| (s.name().to_string(), cfg.stage_seed(s))).collect(),
            outputs: outputs.files().to_vec(),
        })
    }

    /// Writes `config.toml` and `manifest.json` next to the other outputs.
    pub fn write(command: &str, cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<Manifest> {
        outputs.write("config.toml", cfg.to_toml()?)?;
        let m = Manifest::new(command, cfg, outputs)?;
        outputs.write("manifest.json", serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).context("parsing manifest")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs_and_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(dir.path().join("run")).unwrap();
        out.write("a.csv", "x\n1\n").unwrap();
        out.write("sub/b.svg", "<svg/>").unwrap();
        out.write("a.csv", "x\n2\n").unwrap();
        let cfg = ExperimentConfig { seed: 4, ..Default::default() };
        let m = Manifest::write("pour-once", &cfg, &mut out).unwrap();
        assert_eq!(m.outputs, vec!["a.csv", "sub/b.svg", "config.toml"]);
        assert_eq!(m.seeds.len(), Stage::ALL.len());
        assert_eq!(m.config_hash, cfg.hash().unwrap());
        let back = Manifest::load(out.path("manifest.json")).unwrap();
        assert_eq!(back, m);
        let cfg_back = ExperimentConfig::load(out.path("config.toml")).unwrap();
        assert_eq!(cfg_back.hash().unwrap(), m.config_hash);
    }
}
