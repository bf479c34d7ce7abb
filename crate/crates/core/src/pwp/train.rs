use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    loss_aux, loss_p1, loss_p2, loss_weight, prepare_trial, pwp_spec, LossParts, LossWeights, PreparedTrial, PwpError,
    PwpModel, PwpVariant, Result,
};
use crate::neural::{AdamW, Mode, Net, NetInput, Params};
use crate::signals::{min_max_bounds, ElectrodeBounds, ElectrodeSet, Substance, Trial, POUR_SUBSTANCES, WINDOW_FRAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PwpTrainConfig {
    pub width: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// Windows per batch; they come as consecutive pairs `(t - h, t)`.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Cumulative-sum terms per batch, each on one trial drawn from the batch.
    pub aux_per_batch: usize,
    /// Starting value of both offset outputs, in seconds.
    pub offset_init: f64,
    pub seed: u64,
    pub variant: PwpVariant,
    pub electrodes: ElectrodeSet,
    pub loss: LossWeights,
}

impl Default for PwpTrainConfig {
    fn default() -> Self {
        PwpTrainConfig {
            width: 256,
            blocks: 7,
            dropout: 0.05,
            epochs: 200,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-3,
            aux_per_batch: 1,
            offset_init: 0.3,
            seed: 0,
            variant: PwpVariant::Full,
            electrodes: ElectrodeSet::ALL,
            loss: LossWeights::default(),
        }
    }
}

/// Training rows for one step. `pairs` holds `(trial, k)` with `k >= 10`:
/// windows `k - 10` and `k` both enter the batch. `aux` holds `(trial, j)`:
/// the h-grid windows `0..=j` are summed and compared with the weight at the
/// end of window `j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PwpBatch {
    pub pairs: Vec<(usize, usize)>,
    pub aux: Vec<(usize, usize)>,
}

fn gather(data: &[PreparedTrial], rows: &[(usize, usize)]) -> NetInput {
    let cols = data[rows[0].0].windows.ncols();
    let mut dense = Array2::zeros((rows.len(), cols));
    let mut labels = Vec::with_capacity(rows.len());
    for (r, &(ti, k)) in rows.iter().enumerate() {
        dense.row_mut(r).assign(&data[ti].windows.row(k));
        labels.push(data[ti].label);
    }
    NetInput::new(dense, vec![labels])
}

fn split(y: &ArrayView2<f64>, r: usize, variant: PwpVariant) -> (f64, f64, f64) {
    match variant {
        PwpVariant::Full => (y[[r, 0]], y[[r, 1]], y[[r, 2]]),
        PwpVariant::NoOffsets => (y[[r, 0]], 0.0, 0.0),
    }
}

/// Batch loss components, the weighted total and its exact gradient with
/// respect to `params`. `seed` selects dropout masks (`None` = eval mode).
pub fn batch_objective(
    net: &Net,
    params: &Params,
    data: &[PreparedTrial],
    batch: &PwpBatch,
    lw: &LossWeights,
    variant: PwpVariant,
    seed: Option<u64>,
) -> Result<(LossParts, f64, Vec<f64>)> {
    let mode = |salt: u64| seed.map_or(Mode::Eval, |s| Mode::Train { seed: s ^ salt });
    let full = variant == PwpVariant::Full;
    let mut parts = LossParts::default();
    let mut grad = vec![0.0; params.len()];

    if !batch.pairs.is_empty() {
        let rows: Vec<(usize, usize)> = batch.pairs.iter().flat_map(|&(ti, k)| [(ti, k - WINDOW_FRAMES), (ti, k)]).collect();
        let (y, tape) = net.forward(params, &gather(data, &rows), mode(0))?;
        let yv = y.view();
        let mut dy = Array2::zeros(y.raw_dim());
        let nr = rows.len() as f64;
        for (r, &(ti, k)) in rows.iter().enumerate() {
            let d = &data[ti];
            let (dw, os, oe) = split(&yv, r, variant);
            let term = loss_weight(dw, &d.traj, d.t_start[k], lw.h, os, oe);
            parts.weight += term.value / nr;
            dy[[r, 0]] += term.d_dw / nr;
            if full {
                dy[[r, 1]] += term.d_os / nr;
                dy[[r, 2]] += term.d_oe / nr;
                let (v, ds, de) = loss_p1(os, oe, lw.o_min);
                parts.p1 += v / nr;
                dy[[r, 1]] += lw.beta * ds / nr;
                dy[[r, 2]] += lw.beta * de / nr;
            }
        }
        if full {
            let np = batch.pairs.len() as f64;
            for i in 0..batch.pairs.len() {
                let (prev, cur) = (2 * i, 2 * i + 1);
                let (v, ds, de) = loss_p2(yv[[cur, 1]], yv[[prev, 2]]);
                parts.p2 += v / np;
                dy[[cur, 1]] += lw.gamma * ds / np;
                dy[[prev, 2]] += lw.gamma * de / np;
            }
        }
        let g = net.backward(params, &tape, &dy)?;
        grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
    }

    if full && !batch.aux.is_empty() {
        let mut rows = Vec::new();
        let mut spans = Vec::new();
        for &(ti, j) in &batch.aux {
            let start = rows.len();
            rows.extend((0..=j).map(|i| (ti, i * WINDOW_FRAMES)));
            spans.push((start, rows.len()));
        }
        let (y, tape) = net.forward(params, &gather(data, &rows), mode(0x5EED))?;
        let mut dy = Array2::zeros(y.raw_dim());
        let na = batch.aux.len() as f64;
        for (&(ti, j), &(a, b)) in batch.aux.iter().zip(&spans) {
            let d = &data[ti];
            let dws: Vec<f64> = (a..b).map(|r| y[[r, 0]]).collect();
            let t_rand = d.t_start[j * WINDOW_FRAMES] + lw.h;
            let term = loss_aux(&dws, &d.traj, t_rand, y[[b - 1, 2]]);
            parts.aux += term.value / na;
            for r in a..b {
                dy[[r, 0]] += lw.alpha * term.d_each_dw / na;
            }
            dy[[b - 1, 2]] += lw.alpha * term.d_oe / na;
        }
        let g = net.backward(params, &tape, &dy)?;
        grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
    }

    let total = match variant {
        PwpVariant::Full => parts.total(lw),
        PwpVariant::NoOffsets => parts.weight,
    };
    Ok((parts, total, grad))
}

/// Deterministic evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Validation {
    pub parts: LossParts,
    pub total: f64,
    /// Squared-error loss of predicting the mean target for every window
    /// (targets taken at the model's own offsets).
    pub baseline: f64,
    pub mean_o_s: f64,
    pub mean_o_e: f64,
}

/// Deterministic evaluation over every window of every trial: all strided
/// pairs for the per-window terms, every h-grid prefix for the cumulative
/// term.
pub fn validation_parts(
    net: &Net,
    params: &Params,
    data: &[PreparedTrial],
    lw: &LossWeights,
    variant: PwpVariant,
) -> Result<Validation> {
    let full = variant == PwpVariant::Full;
    let mut parts = LossParts::default();
    let (mut n_w, mut n_p, mut n_a) = (0usize, 0usize, 0usize);
    let mut targets = Vec::new();
    let (mut sum_os, mut sum_oe) = (0.0, 0.0);
    for d in data {
        let n = d.n_windows();
        let input = NetInput::new(d.windows.clone(), vec![vec![d.label; n]]);
        let y = net.predict(params, &input)?;
        let yv = y.view();
        for k in 0..n {
            let (dw, os, oe) = split(&yv, k, variant);
            sum_os += os;
            sum_oe += oe;
            let term = loss_weight(dw, &d.traj, d.t_start[k], lw.h, os, oe);
            parts.weight += term.value;
            targets.push(dw - term.d_dw / 2.0);
            if full {
                parts.p1 += loss_p1(os, oe, lw.o_min).0;
                if k >= WINDOW_FRAMES {
                    parts.p2 += loss_p2(yv[[k, 1]], yv[[k - WINDOW_FRAMES, 2]]).0;
                    n_p += 1;
                }
            }
        }
        n_w += n;
        if full {
            let mut acc = 0.0;
            for k in (0..n).step_by(WINDOW_FRAMES) {
                acc += yv[[k, 0]];
                parts.aux += loss_aux(&[acc], &d.traj, d.t_start[k] + lw.h, yv[[k, 2]]).value;
                n_a += 1;
            }
        }
    }
    parts.weight /= n_w.max(1) as f64;
    parts.p1 /= n_w.max(1) as f64;
    parts.p2 /= n_p.max(1) as f64;
    parts.aux /= n_a.max(1) as f64;
    let mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
    let baseline = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / targets.len().max(1) as f64;
    let total = match variant {
        PwpVariant::Full => parts.total(lw),
        PwpVariant::NoOffsets => parts.weight,
    };
    let nw = n_w.max(1) as f64;
    Ok(Validation { parts, total, baseline, mean_o_s: sum_os / nw, mean_o_e: sum_oe / nw })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: f64,
    pub train: LossParts,
    pub val: LossParts,
    pub val_mean_o_s: f64,
    pub val_mean_o_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub val_weight_at_best: f64,
    /// Squared-error loss of the constant-mean predictor on the validation set.
    pub val_weight_baseline: f64,
    pub train_windows: usize,
    pub val_windows: usize,
    pub iterations_per_epoch: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,train_L,val_L,train_weight,train_aux,train_p1,train_p2,val_weight,val_aux,val_p1,val_p2,val_o_s,val_o_e\n",
        );
        for r in &self.curve {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train_total,
                r.val_total,
                r.train.weight,
                r.train.aux,
                r.train.p1,
                r.train.p2,
                r.val.weight,
                r.val.aux,
                r.val.p1,
                r.val.p2,
                r.val_mean_o_s,
                r.val_mean_o_e
            );
        }
        s
    }
}

/// Mean of per-trial electrode bounds for each substance present.
pub(crate) fn frozen_bounds(trials: &[Trial]) -> BTreeMap<Substance, ElectrodeBounds> {
    let mut out = BTreeMap::new();
    for s in POUR_SUBSTANCES {
        let b: Vec<ElectrodeBounds> = trials.iter().filter(|t| t.substance == s).map(|t| min_max_bounds(&t.frames)).collect();
        if let Some(m) = ElectrodeBounds::mean(&b) {
            out.insert(s, m);
        }
    }
    out
}

/// Trains a predictor with best-validation checkpointing.
pub fn train_pwp(train: &[Trial], val: &[Trial], cfg: &PwpTrainConfig) -> Result<(PwpModel, TrainReport)> {
    for s in POUR_SUBSTANCES {
        let n = train.iter().chain(val).filter(|t| t.substance == s).count();
        if n < 2 {
            return Err(PwpError::TooFewTrials { substance: s, got: n });
        }
    }
    // normalize with the same frozen bounds the controller will use
    let bounds = frozen_bounds(train);
    let prep = |ts: &[Trial]| {
        ts.iter().map(|t| prepare_trial(t, cfg.electrodes, bounds.get(&t.substance))).collect::<Result<Vec<_>>>()
    };
    let tr = prep(train)?;
    let va = prep(val)?;
    let net = Net::new(pwp_spec(cfg.width, cfg.blocks, cfg.dropout, cfg.variant))?;
    let mut params = net.init(cfg.seed);
    if cfg.variant == PwpVariant::Full {
        if let Some(mut b) = params.segment_mut("head.bias") {
            b[[1, 0]] = cfg.offset_init;
            b[[2, 0]] = cfg.offset_init;
        }
    }
    let mut opt = AdamW::new(params.len(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7A11);

    let mut anchors: Vec<(usize, usize)> =
        tr.iter().enumerate().flat_map(|(ti, d)| (WINDOW_FRAMES..d.n_windows()).map(move |k| (ti, k))).collect();
    let train_windows: usize = tr.iter().map(|d| d.n_windows()).sum();
    let val_windows: usize = va.iter().map(|d| d.n_windows()).sum();
    let pairs_per_batch = (cfg.batch_size / 2).max(1);
    let iterations = train_windows.div_ceil(cfg.batch_size.max(1));
    anchors.shuffle(&mut rng);
    let mut cursor = 0;

    let mut best: Option<(f64, usize, Params, f64, f64)> = None;
    let mut curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut sum = LossParts::default();
        let mut sum_total = 0.0;
        for _ in 0..iterations {
            let mut batch = PwpBatch::default();
            for _ in 0..pairs_per_batch {
                if cursor == anchors.len() {
                    anchors.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.pairs.push(anchors[cursor]);
                cursor += 1;
            }
            for _ in 0..cfg.aux_per_batch {
                let ti = batch.pairs[rng.random_range(0..batch.pairs.len())].0;
                batch.aux.push((ti, rng.random_range(0..tr[ti].n_grid())));
            }
            let step_seed = rng.random::<u64>();
            let (parts, total, grad) = batch_objective(&net, &params, &tr, &batch, &cfg.loss, cfg.variant, Some(step_seed))?;
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PwpError::Diverged { epoch, detail: format!("batch loss {total}") });
            }
            opt.step(&mut params, &grad);
            sum.weight += parts.weight;
            sum.aux += parts.aux;
            sum.p1 += parts.p1;
            sum.p2 += parts.p2;
            sum_total += total;
        }
        let n = iterations as f64;
        let train_parts = LossParts { weight: sum.weight / n, aux: sum.aux / n, p1: sum.p1 / n, p2: sum.p2 / n };
        let v = validation_parts(&net, &params, &va, &cfg.loss, cfg.variant)?;
        let (val_parts, val_total, baseline) = (v.parts, v.total, v.baseline);
        if !val_total.is_finite() {
            return Err(PwpError::Diverged { epoch, detail: format!("validation loss {val_total}") });
        }
        log::info!(
            "pwp epoch {epoch}: train {:.4} val {:.4} (weight {:.4}, offsets {:.3}/{:.3})",
            sum_total / n,
            val_total,
            val_parts.weight,
            v.mean_o_s,
            v.mean_o_e
        );
        curve.push(CurveRow {
            epoch,
            train_total: sum_total / n,
            val_total,
            train: train_parts,
            val: val_parts,
            val_mean_o_s: v.mean_o_s,
            val_mean_o_e: v.mean_o_e,
        });
        if best.as_ref().is_none_or(|b| val_total < b.0) {
            best = Some((val_total, epoch, params.clone(), val_parts.weight, baseline));
        }
    }

    let (best_val_total, best_epoch, best_params, val_weight_at_best, val_weight_baseline) =
        best.ok_or(PwpError::Diverged { epoch: 0, detail: "no epochs run".into() })?;
    let model = PwpModel {
        net,
        params: best_params,
        variant: cfg.variant,
        electrodes: cfg.electrodes,
        bounds,
    };
    let report = TrainReport {
        curve,
        best_epoch,
        best_val_total,
        val_weight_at_best,
        val_weight_baseline,
        train_windows,
        val_windows,
        iterations_per_epoch: iterations,
    };
    Ok((model, report))
}
