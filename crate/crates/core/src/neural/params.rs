use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Activation, NetSpec, NeuralError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "capflow-net";

const HEAD_INIT_SCALE: f64 = 0.1;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// A named `rows x cols` block of the flat parameter vector. Biases are
/// `rows x 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Segment order: embedding tables, stem, blocks, head.
pub(crate) fn layout_for(spec: &NetSpec) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, rows: usize, cols: usize| {
        out.push(Segment { name, offset, rows, cols });
        offset += rows * cols;
    };
    for (i, &(v, d)) in spec.embeddings.iter().enumerate() {
        push(format!("embed.{i}"), v, d);
    }
    push("stem.weight".into(), spec.width, spec.input_dim);
    push("stem.bias".into(), spec.width, 1);
    for k in 0..spec.blocks {
        push(format!("block.{k}.weight"), spec.width, spec.width);
        push(format!("block.{k}.bias"), spec.width, 1);
    }
    push("head.weight".into(), spec.output_dim, spec.width);
    push("head.bias".into(), spec.output_dim, 1);
    out
}

/// Flat parameter vector plus its layout. Every mutation assigns a new
/// identity so tapes recorded against older values are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: Vec<f64>,
    layout: Vec<Segment>,
    id: u64,
}

impl Params {
    /// He-uniform weights, zero hidden biases, standard-normal embedding rows.
    /// Residual branches are shrunk by `1/sqrt(blocks)` and the head by
    /// [`HEAD_INIT_SCALE`] so initial outputs stay small however deep the
    /// stack is. A ReLU head starts with a small positive bias so its units
    /// are live.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Params> {
        spec.validate()?;
        let layout = layout_for(spec);
        let total = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        let mut values = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in &layout {
            let dst = &mut values[seg.range()];
            if seg.name.starts_with("embed.") {
                for v in dst.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            } else if seg.name.ends_with(".weight") {
                let mut bound = (6.0 / seg.cols as f64).sqrt();
                if seg.name.starts_with("block.") {
                    bound /= (spec.blocks as f64).sqrt();
                } else if seg.name == "head.weight" {
                    bound *= HEAD_INIT_SCALE;
                }
                for v in dst.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            } else if seg.name == "head.bias" && spec.output_activation == Activation::Relu {
                dst.fill(0.1);
            }
        }
        Ok(Params { values, layout, id: fresh_id() })
    }

    pub fn from_values(spec: &NetSpec, values: Vec<f64>) -> Result<Params> {
        spec.validate()?;
        let layout = layout_for(spec);
        let want = spec.param_count();
        if values.len() != want {
            return Err(NeuralError::Dimension { what: "parameter vector", expected: want, got: values.len() });
        }
        Ok(Params { values, layout, id: fresh_id() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.id = fresh_id();
        &mut self.values
    }

    pub fn set_values(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.values.len(), "parameter vector length");
        self.values_mut().copy_from_slice(v);
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub(crate) fn matrix(&self, i: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout[i];
        ArrayView2::from_shape((s.rows, s.cols), &self.values[s.range()]).expect("layout shape")
    }

    /// Mutable view of a named segment.
    pub fn segment_mut(&mut self, name: &str) -> Option<ArrayViewMut2<'_, f64>> {
        let s = self.segment(name)?.clone();
        let v = self.values_mut();
        Some(ArrayViewMut2::from_shape((s.rows, s.cols), &mut v[s.range()]).expect("layout shape"))
    }
}

/// On-disk form: JSON with format tag, version, spec, layout, values and a
/// free-form `meta` object for the owner (label vocabularies, bounds, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: NetSpec,
    pub layout: Vec<Segment>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(spec: &NetSpec, params: &Params, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: spec.clone(),
            layout: params.layout.clone(),
            values: params.values.clone(),
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(NeuralError::Checkpoint(format!("unknown format `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        if c.layout != layout_for(&c.spec) {
            return Err(NeuralError::Checkpoint("layout does not match spec".into()));
        }
        Ok(c)
    }

    pub fn params(&self) -> Result<Params> {
        Params::from_values(&self.spec, self.values.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 6,
            blocks: 3,
            width: 4,
            dropout_rate: 0.0,
            output_dim: 2,
            output_activation: Activation::Relu,
            embeddings: vec![(5, 2)],
        }
    }

    #[test]
    fn layout_partitions_vector() {
        let p = Params::init(&spec(), 3).unwrap();
        let mut next = 0;
        for s in p.layout() {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, p.len());
    }

    #[test]
    fn init_is_seeded() {
        let a = Params::init(&spec(), 3).unwrap();
        let b = Params::init(&spec(), 3).unwrap();
        let c = Params::init(&spec(), 4).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn mutation_changes_identity() {
        let mut p = Params::init(&spec(), 3).unwrap();
        let id = p.id();
        p.values_mut()[0] += 1.0;
        assert_ne!(p.id(), id);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = Params::init(&spec(), 9).unwrap();
        let ck = Checkpoint::new(&spec(), &p, serde_json::json!({"labels": ["a"]}));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap().values(), p.values());
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_layout() {
        let p = Params::init(&spec(), 9).unwrap();
        let mut ck = Checkpoint::new(&spec(), &p, serde_json::Value::Null);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
        let mut ck = Checkpoint::new(&spec(), &p, serde_json::Value::Null);
        ck.layout.pop();
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
    }
}
