use serde::{Deserialize, Serialize};

use super::WeightTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Lower bound for both offsets, seconds.
    pub o_min: f64,
    /// Window length, seconds.
    pub h: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.2, beta: 1.0, gamma: 0.1, o_min: 0.15, h: 0.1 }
    }
}

/// One loss term with partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightTerm {
    pub value: f64,
    pub d_dw: f64,
    pub d_os: f64,
    pub d_oe: f64,
}

/// `(dw_hat - (w(t + h + o_e) - w(t + o_s)))^2`.
pub fn loss_weight(dw_hat: f64, traj: &WeightTrajectory, t: f64, h: f64, o_s: f64, o_e: f64) -> WeightTerm {
    let (w_end, s_end) = traj.w_at(t + h + o_e);
    let (w_start, s_start) = traj.w_at(t + o_s);
    let r = dw_hat - (w_end - w_start);
    WeightTerm { value: r * r, d_dw: 2.0 * r, d_os: 2.0 * r * s_start, d_oe: -2.0 * r * s_end }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuxTerm {
    pub value: f64,
    /// Same for every summed window.
    pub d_each_dw: f64,
    pub d_oe: f64,
}

/// `(sum(dw_hats) - w(t_rand + o_e))^2` where `dw_hats` are the h-grid
/// predictions covering `[0, t_rand]`.
pub fn loss_aux(dw_hats: &[f64], traj: &WeightTrajectory, t_rand: f64, o_e: f64) -> AuxTerm {
    let (w, slope) = traj.w_at(t_rand + o_e);
    let r = dw_hats.iter().sum::<f64>() - w;
    AuxTerm { value: r * r, d_each_dw: 2.0 * r, d_oe: -2.0 * r * slope }
}

/// Hinge below `o_min` on both offsets: `(value, d_os, d_oe)`.
pub fn loss_p1(o_s: f64, o_e: f64, o_min: f64) -> (f64, f64, f64) {
    let hinge = |o: f64| if o < o_min { (o_min - o, -1.0) } else { (0.0, 0.0) };
    let (a, da) = hinge(o_s);
    let (b, db) = hinge(o_e);
    (a + b, da, db)
}

/// `(o_s(t) - o_e(t - h))^2`: `(value, d_os_t, d_oe_prev)`.
pub fn loss_p2(o_s: f64, o_e_prev: f64) -> (f64, f64, f64) {
    let d = o_s - o_e_prev;
    (d * d, 2.0 * d, -2.0 * d)
}

/// Batch-averaged components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub weight: f64,
    pub aux: f64,
    pub p1: f64,
    pub p2: f64,
}

impl LossParts {
    pub fn total(&self, lw: &LossWeights) -> f64 {
        self.weight + lw.alpha * self.aux + lw.beta * self.p1 + lw.gamma * self.p2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> WeightTrajectory {
        // 0, 1, 3, 6, 10, ... g at 0.1 s spacing
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let w: Vec<f64> = (0..40).map(|i| (i * (i + 1) / 2) as f64).collect();
        WeightTrajectory::from_points(t, w)
    }

    #[test]
    fn weight_loss_values() {
        let tr = ramp();
        let (t, h, os, oe) = (1.03, 0.1, 0.2, 0.25);
        let dw = tr.weight(t + h + oe) - tr.weight(t + os);
        assert!(loss_weight(dw, &tr, t, h, os, oe).value < 1e-24);
        let flat = WeightTrajectory::from_points(vec![0.0, 1.0], vec![0.0, 3.0]);
        let l = loss_weight(2.0, &flat, 0.0, 1.0, 0.0, 0.0);
        assert!((l.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_loss_offset_gradients_match_differences() {
        let tr = ramp();
        let (dw, t, h) = (4.0, 1.01, 0.1);
        let (os, oe) = (0.213, 0.267);
        let g = loss_weight(dw, &tr, t, h, os, oe);
        let e = 1e-6;
        let fd_e = (loss_weight(dw, &tr, t, h, os, oe + e).value - loss_weight(dw, &tr, t, h, os, oe - e).value) / (2.0 * e);
        let fd_s = (loss_weight(dw, &tr, t, h, os + e, oe).value - loss_weight(dw, &tr, t, h, os - e, oe).value) / (2.0 * e);
        let fd_w = (loss_weight(dw + e, &tr, t, h, os, oe).value - loss_weight(dw - e, &tr, t, h, os, oe).value) / (2.0 * e);
        let slope = tr.w_at(t + h + oe).1;
        let r = dw - (tr.weight(t + h + oe) - tr.weight(t + os));
        assert!((g.d_oe - 2.0 * r * -slope).abs() < 1e-12);
        assert!((g.d_oe - fd_e).abs() < 1e-6 * fd_e.abs().max(1.0));
        assert!((g.d_os - fd_s).abs() < 1e-6 * fd_s.abs().max(1.0));
        assert!((g.d_dw - fd_w).abs() < 1e-6 * fd_w.abs().max(1.0));
    }

    #[test]
    fn aux_loss_values() {
        let tr = WeightTrajectory::from_points(vec![0.0, 1.0, 2.0], vec![0.0, 30.0, 30.0]);
        assert_eq!(loss_aux(&[0.0; 10], &tr, 1.0, 0.0).value, 900.0);
        let tr = ramp();
        let preds: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        // sum(1..=10) = 55 = w(1.0)
        assert!(loss_aux(&preds, &tr, 1.0, 0.0).value < 1e-20);
    }

    #[test]
    fn aux_loss_matches_brute_force_cumsum() {
        let tr = ramp();
        let preds: Vec<f64> = (0..25).map(|i| 0.3 * i as f64 + (i % 3) as f64).collect();
        for j in 1..=25 {
            let mut acc = 0.0;
            for p in &preds[..j] {
                acc += p;
            }
            let t_rand = j as f64 * 0.1;
            let want = (acc - tr.weight(t_rand + 0.2)).powi(2);
            let got = loss_aux(&preds[..j], &tr, t_rand, 0.2).value;
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn penalties() {
        assert_eq!(loss_p1(0.2, 0.2, 0.15).0, 0.0);
        assert!((loss_p1(0.1, 0.2, 0.15).0 - 0.05).abs() < 1e-15);
        assert_eq!(loss_p1(0.1, 0.1, 0.15).1, -1.0);
        assert_eq!(loss_p2(0.3, 0.3).0, 0.0);
        assert!((loss_p2(0.3, 0.1).0 - 0.04).abs() < 1e-15);
    }

    #[test]
    fn total_combines_with_weights() {
        let lw = LossWeights::default();
        assert_eq!(LossParts::default().total(&lw), 0.0);
        let p = LossParts { weight: 4.0, aux: 5.0, p1: 1.0, p2: 2.0 };
        assert!((p.total(&lw) - 6.2).abs() < 1e-12);
    }
}
