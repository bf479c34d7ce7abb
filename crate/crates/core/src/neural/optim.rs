use serde::{Deserialize, Serialize};

use super::Params;

/// Adam with bias correction. With `decoupled` set, weight decay shrinks the
/// parameters directly before the Adam delta; otherwise it is added to the
/// gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decoupled: bool,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> AdamW {
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, decoupled: true, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grad: &[f64]) {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        assert_eq!(params.len(), self.m.len(), "parameter length");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = if self.decoupled { 1.0 - self.lr * self.weight_decay } else { 1.0 };
        let (lr, b1, b2, eps, wd, coupled) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, !self.decoupled);
        let p = params.values_mut();
        for i in 0..p.len() {
            let g = if coupled { grad[i] + wd * p[i] } else { grad[i] };
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] = p[i] * shrink - lr * mh / (vh.sqrt() + eps);
        }
    }
}
