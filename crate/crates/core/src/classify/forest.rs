use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifyError, Result};
use crate::simworld::mix_seed;

pub const FOREST_FORMAT_VERSION: u32 = 1;
const FOREST_FORMAT: &str = "capflow-forest";

/// Candidate features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `floor(sqrt(d))`, at least 1.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (dim as f64).sqrt().floor() as usize,
            MaxFeatures::All => dim,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    /// Nodes holding fewer (bootstrap-weighted) samples become leaves.
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_features: MaxFeatures::Sqrt, min_samples_split: 2, max_depth: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Sparse class histogram `(class, weight)` sorted by class, and its
    /// majority class (lowest index on ties).
    Leaf { hist: Vec<(usize, u32)>, class: usize },
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        match self.leaf(x) {
            Node::Leaf { class, .. } => *class,
            Node::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format: String,
    version: u32,
    pub n_classes: usize,
    pub dim: usize,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

/// Gini impurity of a weighted class histogram; 0 for an empty one.
pub fn gini(hist: &[f64]) -> f64 {
    let w: f64 = hist.iter().sum();
    if w <= 0.0 {
        return 0.0;
    }
    1.0 - hist.iter().map(|c| (c / w) * (c / w)).sum::<f64>()
}

/// Column-major copy of the training matrix.
struct Columns {
    n: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, f: usize) -> &[f64] {
        &self.data[f * self.n..(f + 1) * self.n]
    }
}

pub fn fit_forest<S: AsRef<[f64]> + Sync>(x: &[S], y: &[usize], n_classes: usize, cfg: &ForestConfig) -> Result<Forest> {
    if x.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if x.len() != y.len() {
        return Err(ClassifyError::LengthMismatch { features: x.len(), labels: y.len() });
    }
    if cfg.n_trees == 0 {
        return Err(ClassifyError::Config("n_trees must be at least 1".into()));
    }
    let dim = x[0].as_ref().len();
    if dim == 0 {
        return Err(ClassifyError::Config("features have zero dimensions".into()));
    }
    for row in x {
        if row.as_ref().len() != dim {
            return Err(ClassifyError::Dimension { expected: dim, got: row.as_ref().len() });
        }
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ClassifyError::LabelRange { label: bad, classes: n_classes });
    }
    let n = x.len();
    let mut data = vec![0.0; n * dim];
    for (i, row) in x.iter().enumerate() {
        for (f, v) in row.as_ref().iter().enumerate() {
            data[f * n + i] = *v;
        }
    }
    let cols = Columns { n, data };
    let k = cfg.max_features.resolve(dim);
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&cols, y, n_classes, dim, k, cfg, mix_seed(cfg.seed, t as u64)))
        .collect();
    Ok(Forest {
        format: FOREST_FORMAT.into(),
        version: FOREST_FORMAT_VERSION,
        n_classes,
        dim,
        config: cfg.clone(),
        trees,
    })
}

struct Pending {
    node: usize,
    samples: Vec<usize>,
    depth: usize,
}

fn grow_tree(
    cols: &Columns,
    y: &[usize],
    n_classes: usize,
    dim: usize,
    k: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = vec![0u32; cols.n];
    if cfg.bootstrap {
        for _ in 0..cols.n {
            weight[rng.random_range(0..cols.n)] += 1;
        }
    } else {
        weight.iter_mut().for_each(|w| *w = 1);
    }
    let root: Vec<usize> = (0..cols.n).filter(|&i| weight[i] > 0).collect();

    let mut nodes = vec![Node::Leaf { hist: vec![], class: 0 }];
    let mut stack = vec![Pending { node: 0, samples: root, depth: 0 }];
    let mut features: Vec<usize> = (0..dim).collect();
    let mut buf: Vec<(f64, usize, u32)> = Vec::new();
    let mut hist = vec![0.0; n_classes];
    let mut left = vec![0.0; n_classes];

    while let Some(p) = stack.pop() {
        hist.iter_mut().for_each(|h| *h = 0.0);
        for &i in &p.samples {
            hist[y[i]] += weight[i] as f64;
        }
        let total: f64 = hist.iter().sum();
        let pure = hist.iter().filter(|&&h| h > 0.0).count() <= 1;
        let depth_capped = cfg.max_depth.is_some_and(|d| p.depth >= d);
        let split = if pure || total < cfg.min_samples_split as f64 || depth_capped {
            None
        } else {
            best_split(cols, y, &weight, &p.samples, &hist, k, &mut features, &mut buf, &mut left, &mut rng)
        };
        match split {
            None => nodes[p.node] = make_leaf(&hist),
            Some((feature, threshold)) => {
                let col = cols.col(feature);
                let (l, r): (Vec<usize>, Vec<usize>) = p.samples.iter().partition(|&&i| col[i] <= threshold);
                let (li, ri) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { hist: vec![], class: 0 });
                nodes.push(Node::Leaf { hist: vec![], class: 0 });
                nodes[p.node] = Node::Split { feature, threshold, left: li, right: ri };
                stack.push(Pending { node: ri, samples: r, depth: p.depth + 1 });
                stack.push(Pending { node: li, samples: l, depth: p.depth + 1 });
            }
        }
    }
    Tree { nodes }
}

fn make_leaf(hist: &[f64]) -> Node {
    let sparse: Vec<(usize, u32)> =
        hist.iter().enumerate().filter(|(_, &h)| h > 0.0).map(|(c, &h)| (c, h.round() as u32)).collect();
    let mut class = 0;
    let mut best = 0;
    for &(c, w) in &sparse {
        if w > best {
            best = w;
            class = c;
        }
    }
    Node::Leaf { hist: sparse, class }
}

/// Best Gini split over a random feature sample. Keeps drawing features past
/// `k` until at least one non-constant feature has been seen.
#[allow(clippy::too_many_arguments)]
fn best_split(
    cols: &Columns,
    y: &[usize],
    weight: &[u32],
    samples: &[usize],
    hist: &[f64],
    k: usize,
    features: &mut [usize],
    buf: &mut Vec<(f64, usize, u32)>,
    left: &mut [f64],
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let total: f64 = hist.iter().sum();
    let parent_sq: f64 = hist.iter().map(|h| h * h).sum();
    // maximize sl/wl + sr/wr, the sum of squared class weights over child weight
    let mut best: Option<(f64, usize, f64)> = None;
    let mut visited = 0;
    let dim = features.len();
    for j in 0..dim {
        if visited >= k && best.is_some() {
            break;
        }
        let pick = rng.random_range(j..dim);
        features.swap(j, pick);
        let f = features[j];
        let col = cols.col(f);
        buf.clear();
        buf.extend(samples.iter().map(|&i| (col[i], y[i], weight[i])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if buf[0].0 == buf[buf.len() - 1].0 {
            continue;
        }
        visited += 1;
        left.iter_mut().for_each(|l| *l = 0.0);
        let (mut wl, mut sl, mut sr) = (0.0, 0.0, parent_sq);
        for m in 0..buf.len() - 1 {
            let (v, c, w) = buf[m];
            let w = w as f64;
            let lc = left[c];
            let rc = hist[c] - lc;
            sl += (lc + w) * (lc + w) - lc * lc;
            sr += (rc - w) * (rc - w) - rc * rc;
            left[c] = lc + w;
            wl += w;
            let next = buf[m + 1].0;
            if next == v {
                continue;
            }
            let wr = total - wl;
            let score = sl / wl + sr / wr;
            if best.is_none_or(|(b, _, _)| score > b) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some((score, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl Forest {
    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim {
            return Err(ClassifyError::Dimension { expected: self.dim, got: f.len() });
        }
        Ok(())
    }

    /// Per-class vote counts.
    pub fn votes(&self, f: &[f64]) -> Result<Vec<usize>> {
        self.check(f)?;
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[t.predict(f)] += 1;
        }
        Ok(v)
    }

    /// Majority vote; the lowest class index wins ties.
    pub fn predict(&self, f: &[f64]) -> Result<usize> {
        let v = self.votes(f)?;
        let mut best = 0;
        for (c, &n) in v.iter().enumerate() {
            if n > v[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Vote fractions.
    pub fn predict_proba(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.trees.len() as f64;
        Ok(self.votes(f)?.into_iter().map(|v| v as f64 / n).collect())
    }

    pub fn predict_many<S: AsRef<[f64]> + Sync>(&self, x: &[S]) -> Result<Vec<usize>> {
        x.par_iter().map(|f| self.predict(f.as_ref())).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let f: Forest = serde_json::from_str(text)?;
        if f.format != FOREST_FORMAT {
            return Err(ClassifyError::Format(format!("unexpected format tag `{}`", f.format)));
        }
        if f.version != FOREST_FORMAT_VERSION {
            return Err(ClassifyError::Format(format!("unsupported version {}", f.version)));
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        Forest::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(n: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            let row: Vec<f64> = (0..5)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if d == 0 { center + noise * z } else { z }
                })
                .collect();
            x.push(row);
            y.push(c);
        }
        (x, y)
    }

    fn subtree_hist(t: &Tree, i: usize, n_classes: usize) -> Vec<f64> {
        match &t.nodes[i] {
            Node::Leaf { hist, .. } => {
                let mut h = vec![0.0; n_classes];
                for &(c, w) in hist {
                    h[c] += w as f64;
                }
                h
            }
            Node::Split { left, right, .. } => {
                let l = subtree_hist(t, *left, n_classes);
                let r = subtree_hist(t, *right, n_classes);
                l.iter().zip(&r).map(|(a, b)| a + b).collect()
            }
        }
    }

    #[test]
    fn single_class_predicts_that_class() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![3; 20];
        let f = fit_forest(&x, &y, 5, &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        for probe in [[0.0, 0.0], [100.0, -3.0], [7.5, 2.0]] {
            assert_eq!(f.predict(&probe).unwrap(), 3);
        }
    }

    #[test]
    fn separated_clusters_are_learned() {
        let (x, y) = clusters(200, 0.3, 1);
        let (xt, yt) = clusters(200, 0.3, 2);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 25, seed: 4, ..Default::default() }).unwrap();
        assert_eq!(f.predict_many(&x).unwrap(), y);
        assert_eq!(f.predict_many(&xt).unwrap(), yt);
    }

    #[test]
    fn same_seed_same_trees() {
        let (x, y) = clusters(120, 1.5, 3);
        let cfg = ForestConfig { n_trees: 8, seed: 11, ..Default::default() };
        let a = fit_forest(&x, &y, 2, &cfg).unwrap();
        let b = fit_forest(&x, &y, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, 2, &ForestConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn one_tree_forest_follows_its_leaf() {
        let (x, y) = clusters(80, 2.0, 5);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 1, seed: 2, ..Default::default() }).unwrap();
        for row in &x {
            let Node::Leaf { hist, class } = f.trees[0].leaf(row) else { unreachable!() };
            let best = hist.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap().0;
            assert_eq!(*class, best);
            assert_eq!(f.predict(row).unwrap(), best);
        }
    }

    #[test]
    fn leaf_histograms_count_bootstrap_multiplicity() {
        let (x, y) = clusters(90, 1.0, 6);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 6, seed: 9, ..Default::default() }).unwrap();
        for t in &f.trees {
            let root = subtree_hist(t, 0, 2);
            assert_eq!(root.iter().sum::<f64>(), 90.0);
        }
        let nb = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 2, bootstrap: false, ..Default::default() }).unwrap();
        let root = subtree_hist(&nb.trees[0], 0, 2);
        assert_eq!(root, vec![45.0, 45.0]);
    }

    #[test]
    fn splits_never_raise_impurity() {
        let (x, y) = clusters(150, 2.5, 7);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 5, seed: 1, ..Default::default() }).unwrap();
        for t in &f.trees {
            for (i, n) in t.nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = n {
                    let p = subtree_hist(t, i, 2);
                    let l = subtree_hist(t, *left, 2);
                    let r = subtree_hist(t, *right, 2);
                    let (wl, wr): (f64, f64) = (l.iter().sum(), r.iter().sum());
                    let child = (wl * gini(&l) + wr * gini(&r)) / (wl + wr);
                    assert!(child <= gini(&p) + 1e-12);
                    assert!(wl > 0.0 && wr > 0.0);
                }
            }
        }
    }

    #[test]
    fn unlimited_trees_fit_training_data() {
        let (x, y) = clusters(100, 3.0, 8);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() }).unwrap();
        assert_eq!(f.predict_many(&x).unwrap(), y);
        let capped = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 1, max_depth: Some(2), ..Default::default() }).unwrap();
        assert!(capped.trees[0].depth() <= 2);
    }

    #[test]
    fn proba_sums_to_one_and_ties_go_low() {
        let (x, y) = clusters(60, 2.0, 9);
        let f = fit_forest(&x, &y, 4, &ForestConfig { n_trees: 7, ..Default::default() }).unwrap();
        let p = f.predict_proba(&x[0]).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let leaf = |c| Tree { nodes: vec![Node::Leaf { hist: vec![(c, 1)], class: c }] };
        let mut tie = f.clone();
        tie.trees = vec![leaf(2), leaf(1), leaf(2), leaf(1)];
        assert_eq!(tie.predict(&x[0]).unwrap(), 1);
    }

    #[test]
    fn more_trees_shrink_vote_spread() {
        // std over seeds of the class-1 vote fraction at a borderline point
        let (x, y) = clusters(120, 2.5, 10);
        let probe = [0.2, 0.0, 0.0, 0.0, 0.0];
        let spread = |n_trees: usize| {
            let v: Vec<f64> = (0..24)
                .map(|s| {
                    let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees, seed: 100 + s, ..Default::default() }).unwrap();
                    f.predict_proba(&probe).unwrap()[1]
                })
                .collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let s: Vec<f64> = [1, 4, 16, 64].into_iter().map(spread).collect();
        for w in s.windows(2) {
            assert!(w[1] <= w[0], "{s:?}");
        }
    }

    #[test]
    fn input_errors() {
        let x = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(fit_forest(&x, &[0, 1], 2, &ForestConfig::default()), Err(ClassifyError::Dimension { .. })));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(fit_forest(&empty, &[], 2, &ForestConfig::default()), Err(ClassifyError::Empty)));
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(fit_forest(&x, &[0], 2, &ForestConfig::default()), Err(ClassifyError::LengthMismatch { .. })));
        assert!(matches!(fit_forest(&x, &[0, 5], 2, &ForestConfig::default()), Err(ClassifyError::LabelRange { .. })));
        let f = fit_forest(&x, &[0, 1], 2, &ForestConfig { n_trees: 2, ..Default::default() }).unwrap();
        assert!(matches!(f.predict(&[1.0, 2.0]), Err(ClassifyError::Dimension { .. })));
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = clusters(50, 1.0, 12);
        let f = fit_forest(&x, &y, 2, &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
        let back = Forest::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let bad = f.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(Forest::from_json(&bad), Err(ClassifyError::Format(_))));
    }

    #[test]
    fn sqrt_rule() {
        assert_eq!(MaxFeatures::Sqrt.resolve(4000), 63);
        assert_eq!(MaxFeatures::Sqrt.resolve(1), 1);
        assert_eq!(MaxFeatures::Count(0).resolve(10), 1);
        assert_eq!(MaxFeatures::All.resolve(7), 7);
    }
}
