use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{settle_horizon, ControlError, Result};
use crate::neural::{bce, Activation, AdamW, Checkpoint, Mode, Net, NetInput, NetSpec, Params};
use crate::pwp::{frozen_bounds, EMBED_DIM, LABELS};
use crate::signals::{ElectrodeBounds, Substance, Trial, WINDOW_FRAMES, WINDOW_VALUES};
use crate::simworld::{mix_seed, Catalog, PourSetup, WristCommand};

/// Target weights the cloned policy is conditioned on.
pub const BC_TARGETS: [f64; 4] = [50.0, 75.0, 100.0, 125.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetClass(pub usize);

impl TargetClass {
    pub fn from_grams(g: f64) -> Option<TargetClass> {
        BC_TARGETS.iter().position(|&t| (t - g).abs() < 1e-9).map(TargetClass)
    }

    pub fn grams(self) -> f64 {
        BC_TARGETS[self.0]
    }

    pub fn one_hot(self) -> [f64; 4] {
        std::array::from_fn(|i| if i == self.0 { 1.0 } else { 0.0 })
    }
}

/// Same residual stack as the weight predictor, with the target one-hot
/// appended to the window and a single sigmoid output.
pub fn bc_spec(width: usize, blocks: usize, dropout: f64) -> NetSpec {
    NetSpec {
        input_dim: WINDOW_VALUES + BC_TARGETS.len() + EMBED_DIM,
        blocks,
        width,
        dropout_rate: dropout,
        output_dim: 1,
        output_activation: Activation::Sigmoid,
        embeddings: vec![(LABELS, EMBED_DIM)],
    }
}

/// A scripted demonstration: the recorded trial and the direction
/// commanded on every tick before the wrist came back upright
/// (1 = Forward, 0 = Backward).
#[derive(Debug, Clone, PartialEq)]
pub struct BcDemo {
    pub substance: Substance,
    pub target: f64,
    /// Mass still expected to land after retraction begins, subtracted
    /// from the target by the demonstrator.
    pub margin: f64,
    pub trial: Trial,
    pub actions: Vec<u8>,
    pub final_true: f64,
}

impl BcDemo {
    /// Tick of the single Forward to Backward switch.
    pub fn switch_tick(&self) -> Option<usize> {
        self.actions.iter().position(|&a| a == 0)
    }
}

/// Pours Forward until true landed plus in-flight mass reaches
/// `target - margin`, then rotates back and waits for the stream to land.
fn demonstrate(catalog: &Catalog, setup: &PourSetup, target: f64, margin: f64) -> BcDemo {
    let mut sim = setup.start(catalog);
    let settle = settle_horizon(catalog);
    let max_steps = (super::MAX_POUR_SECONDS / catalog.plant.dt).round() as usize;
    let mut actions = Vec::new();
    let mut switched = false;
    let mut settle_from: Option<f64> = None;
    for _ in 0..=max_steps {
        let obs = sim.sense();
        let st = &sim.state;
        if let Some(t0) = settle_from {
            if obs.t - t0 >= settle - 1e-9 {
                break;
            }
            sim.apply(WristCommand::Hold);
            continue;
        }
        if !switched && (st.scale_true() + st.in_flight() >= target - margin || obs.angle >= catalog.plant.max_angle) {
            switched = true;
        }
        if switched && obs.angle <= 0.0 {
            settle_from = Some(obs.t);
            sim.apply(WristCommand::Hold);
            continue;
        }
        actions.push(if switched { 0 } else { 1 });
        sim.apply(if switched { WristCommand::Backward } else { WristCommand::Forward });
    }
    let final_true = sim.state.scale_true();
    BcDemo { substance: setup.substance, target, margin, trial: sim.into_record().trial, actions, final_true }
}

/// `n` demonstrations of one substance and target. The margin is the
/// overpour of one zero-margin pilot pour at the same target.
pub fn generate_bc_demos(catalog: &Catalog, substance: Substance, target: f64, n: usize, seed: u64) -> Vec<BcDemo> {
    let stream = substance.index() as u64 * 1_000 + target.round() as u64;
    let pilot = demonstrate(catalog, &PourSetup::new(substance, mix_seed(seed, stream * 100 + 99)), target, 0.0);
    let margin = (pilot.final_true - target).max(0.0);
    (0..n)
        .map(|i| {
            let setup = PourSetup { day_seed: i as i64, ..PourSetup::new(substance, mix_seed(seed, stream * 100 + i as u64)) };
            demonstrate(catalog, &setup, target, margin)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcTrainConfig {
    pub width: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for BcTrainConfig {
    fn default() -> Self {
        BcTrainConfig {
            width: 256,
            blocks: 7,
            dropout: 0.05,
            epochs: 50,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-3,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcTrainReport {
    /// `(epoch, train BCE, validation BCE)`.
    pub curve: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
    pub best_val_bce: f64,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl BcTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_bce,val_bce\n");
        for (e, a, b) in &self.curve {
            s.push_str(&format!("{e},{a},{b}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BcModel {
    pub net: Net,
    pub params: Params,
    pub bounds: BTreeMap<Substance, ElectrodeBounds>,
}

#[derive(Serialize, Deserialize)]
struct BcMeta {
    kind: String,
    bounds: BTreeMap<Substance, ElectrodeBounds>,
}

impl BcModel {
    fn row(window: &[f64], class: TargetClass) -> Vec<f64> {
        let mut r = Vec::with_capacity(WINDOW_VALUES + BC_TARGETS.len());
        r.extend_from_slice(window);
        r.extend_from_slice(&class.one_hot());
        r
    }

    /// Probability of continuing Forward for one normalized window.
    pub fn forward_probability(&self, window: &[f64], substance: Substance, class: TargetClass) -> Result<f64> {
        let label = substance.pour_label().ok_or(crate::pwp::PwpError::NotPourable(substance))?;
        if window.len() != WINDOW_VALUES {
            return Err(crate::neural::NeuralError::Dimension { what: "window", expected: WINDOW_VALUES, got: window.len() }.into());
        }
        let y = self.net.predict(&self.params, &NetInput::single(&Self::row(window, class), &[label]))?;
        Ok(y[[0, 0]])
    }

    pub fn command(&self, window: &[f64], substance: Substance, class: TargetClass) -> Result<WristCommand> {
        Ok(if self.forward_probability(window, substance, class)? >= 0.5 { WristCommand::Forward } else { WristCommand::Backward })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = BcMeta { kind: "bc".into(), bounds: self.bounds.clone() };
        Checkpoint::new(self.net.spec(), &self.params, serde_json::to_value(meta).expect("meta serializes"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<BcModel> {
        let meta: BcMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| ControlError::Neural(crate::neural::NeuralError::Checkpoint(e.to_string())))?;
        Ok(BcModel { net: Net::new(ck.spec.clone())?, params: ck.params()?, bounds: meta.bounds })
    }
}

struct Samples {
    dense: Vec<Vec<f64>>,
    labels: Vec<usize>,
    targets: Vec<f64>,
}

/// h-grid windows of a demo, each labelled with the command issued on the
/// tick that completed it.
fn demo_samples(demo: &BcDemo, bounds: &ElectrodeBounds, out: &mut Samples) -> Result<()> {
    let class = TargetClass::from_grams(demo.target).ok_or(ControlError::UnknownTarget(demo.target))?;
    let label = demo.substance.pour_label().ok_or(crate::pwp::PwpError::NotPourable(demo.substance))?;
    let frames = &demo.trial.frames;
    let mut norm = vec![0.0; frames.len() * crate::signals::ELECTRODES];
    for (k, f) in frames.iter().enumerate() {
        bounds.normalize_frame(f, &mut norm[k * 10..k * 10 + 10]);
    }
    let mut k = WINDOW_FRAMES - 1;
    while k < demo.actions.len() {
        let window = &norm[(k + 1 - WINDOW_FRAMES) * 10..(k + 1) * 10];
        out.dense.push(BcModel::row(window, class));
        out.labels.push(label);
        out.targets.push(demo.actions[k] as f64);
        k += WINDOW_FRAMES;
    }
    Ok(())
}

fn batch_input(s: &Samples, idx: &[usize]) -> (NetInput, Array2<f64>) {
    let cols = s.dense[0].len();
    let mut dense = Array2::zeros((idx.len(), cols));
    let mut t = Array2::zeros((idx.len(), 1));
    for (r, &i) in idx.iter().enumerate() {
        dense.row_mut(r).assign(&ndarray::ArrayView1::from(&s.dense[i]));
        t[[r, 0]] = s.targets[i];
    }
    (NetInput::new(dense, vec![idx.iter().map(|&i| s.labels[i]).collect()]), t)
}

fn mean_bce(net: &Net, params: &Params, s: &Samples) -> Result<f64> {
    let idx: Vec<usize> = (0..s.targets.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(1024) {
        let (x, t) = batch_input(s, chunk);
        let y = net.predict(params, &x)?;
        total += bce(&y, &t).0 * chunk.len() as f64;
    }
    Ok(total / s.targets.len().max(1) as f64)
}

/// Trains the cloned policy with best-validation checkpointing.
///
/// Demos are grouped by substance and target; the first
/// `ceil(train_frac * n)` of each group train, the rest validate. Every
/// substance present must cover all four target classes.
pub fn train_bc(demos: &[BcDemo], cfg: &BcTrainConfig) -> Result<(BcModel, BcTrainReport)> {
    let substances: BTreeSet<Substance> = demos.iter().map(|d| d.substance).collect();
    for &s in &substances {
        for &t in &BC_TARGETS {
            if !demos.iter().any(|d| d.substance == s && (d.target - t).abs() < 1e-9) {
                return Err(ControlError::MissingClass { substance: s, target: t });
            }
        }
    }
    if let Some(d) = demos.iter().find(|d| TargetClass::from_grams(d.target).is_none()) {
        return Err(ControlError::UnknownTarget(d.target));
    }
    let trials: Vec<Trial> = demos.iter().map(|d| d.trial.clone()).collect();
    let bounds = frozen_bounds(&trials);

    let mut groups: BTreeMap<(Substance, u64), Vec<&BcDemo>> = BTreeMap::new();
    for d in demos {
        groups.entry((d.substance, d.target.to_bits())).or_default().push(d);
    }
    let mut tr = Samples { dense: vec![], labels: vec![], targets: vec![] };
    let mut va = Samples { dense: vec![], labels: vec![], targets: vec![] };
    for g in groups.values() {
        // keep one demo back whenever a group has two
        let n_train = ((cfg.train_frac * g.len() as f64).round() as usize).clamp(1, (g.len() - 1).max(1));
        for (i, d) in g.iter().enumerate() {
            let b = &bounds[&d.substance];
            demo_samples(d, b, if i < n_train { &mut tr } else { &mut va })?;
        }
    }
    if tr.targets.is_empty() || va.targets.is_empty() {
        return Err(ControlError::Predictor("need demos for both training and validation".into()));
    }

    let net = Net::new(bc_spec(cfg.width, cfg.blocks, cfg.dropout))?;
    let mut params = net.init(cfg.seed);
    let mut opt = AdamW::new(params.len(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBC);
    let mut order: Vec<usize> = (0..tr.targets.len()).collect();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (x, t) = batch_input(&tr, chunk);
            let (y, tape) = net.forward(&params, &x, Mode::Train { seed: rng.random() })?;
            let (l, dy) = bce(&y, &t);
            let g = net.backward(&params, &tape, &dy)?;
            opt.step(&mut params, &g.params);
            sum += l * chunk.len() as f64;
        }
        let train_bce = sum / order.len() as f64;
        let val_bce = mean_bce(&net, &params, &va)?;
        log::info!("bc epoch {epoch}: train {train_bce:.4} val {val_bce:.4}");
        curve.push((epoch, train_bce, val_bce));
        if best.as_ref().is_none_or(|b| val_bce < b.0) {
            best = Some((val_bce, epoch, params.clone()));
        }
    }
    let (best_val_bce, best_epoch, params) = best.ok_or_else(|| ControlError::Predictor("no epochs run".into()))?;
    let report = BcTrainReport { curve, best_epoch, best_val_bce, train_samples: tr.targets.len(), val_samples: va.targets.len() };
    Ok((BcModel { net, params, bounds }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{CapacitanceFrame, TrialKind, POUR_SUBSTANCES};

    #[test]
    fn target_classes() {
        assert_eq!(TargetClass::from_grams(75.0), Some(TargetClass(1)));
        assert_eq!(TargetClass::from_grams(80.0), None);
        assert_eq!(TargetClass(3).one_hot(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(bc_spec(8, 1, 0.0).input_dim, 154);
    }

    #[test]
    fn demos_switch_once_and_land_near_target() {
        let cat = Catalog::default();
        for s in [Substance::Water, Substance::Rice] {
            for d in generate_bc_demos(&cat, s, 75.0, 3, 5) {
                let k = d.switch_tick().expect("demo retracts");
                assert!(d.actions[..k].iter().all(|&a| a == 1));
                assert!(d.actions[k..].iter().all(|&a| a == 0));
                assert!(d.margin > 0.0);
                assert!((d.final_true - d.target).abs() <= d.margin, "{s}: {} vs {} (margin {})", d.final_true, d.target, d.margin);
            }
        }
    }

    /// Windows read 1.0 on every electrode while pouring and 0.0 after.
    fn toy_demo(substance: Substance, target: f64, switch: usize) -> BcDemo {
        let n = switch * 2;
        let frames = (0..n)
            .map(|k| CapacitanceFrame { t: k as f64 * 0.01, readings: [if k < switch { 100.0 } else { 0.0 }; 10] })
            .collect();
        let actions = (0..n).map(|k| u8::from(k < switch)).collect();
        let trial = Trial {
            kind: TrialKind::Pour,
            substance,
            container: None,
            frames,
            scale: vec![],
            day_seed: 0,
            initial_fill: 150.0,
        };
        BcDemo { substance, target, margin: 0.0, trial, actions, final_true: target }
    }

    #[test]
    fn separable_demos_are_learned() {
        let mut demos = Vec::new();
        for &t in &BC_TARGETS {
            for r in 0..5 {
                demos.push(toy_demo(Substance::Oil, t, 300 + 40 * r));
            }
        }
        let cfg = BcTrainConfig { width: 16, blocks: 2, epochs: 50, lr: 3e-3, dropout: 0.0, ..Default::default() };
        let (model, report) = train_bc(&demos, &cfg).unwrap();
        assert!(report.best_val_bce < 0.05, "{}", report.best_val_bce);
        let class = TargetClass(2);
        let p = model.forward_probability(&[1.0; WINDOW_VALUES], Substance::Oil, class).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(model.command(&[1.0; WINDOW_VALUES], Substance::Oil, class).unwrap(), WristCommand::Forward);
        assert_eq!(model.command(&[0.0; WINDOW_VALUES], Substance::Oil, class).unwrap(), WristCommand::Backward);
    }

    #[test]
    fn missing_target_class_is_an_error() {
        let demos: Vec<BcDemo> = BC_TARGETS[..3].iter().map(|&t| toy_demo(Substance::Water, t, 200)).collect();
        assert!(matches!(train_bc(&demos, &BcTrainConfig::default()), Err(ControlError::MissingClass { target, .. }) if target == 125.0));
    }

    #[test]
    fn output_is_a_probability() {
        let net = Net::new(bc_spec(8, 2, 0.0)).unwrap();
        let model = BcModel { params: net.init(3), net, bounds: BTreeMap::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let w: Vec<f64> = (0..WINDOW_VALUES).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = POUR_SUBSTANCES[rng.random_range(0..5)];
            let p = model.forward_probability(&w, s, TargetClass(rng.random_range(0..4))).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }
}
