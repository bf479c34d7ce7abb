use crate::signals::ScaleSample;

/// Scale readings as a piecewise-linear function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    t: Vec<f64>,
    w: Vec<f64>,
}

impl WeightTrajectory {
    /// `samples` must be non-empty and sorted by time.
    pub fn new(samples: &[ScaleSample]) -> WeightTrajectory {
        assert!(!samples.is_empty(), "weight trajectory needs at least one sample");
        WeightTrajectory { t: samples.iter().map(|s| s.t).collect(), w: samples.iter().map(|s| s.weight).collect() }
    }

    pub fn from_points(t: Vec<f64>, w: Vec<f64>) -> WeightTrajectory {
        assert!(!t.is_empty() && t.len() == w.len(), "trajectory points");
        WeightTrajectory { t, w }
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Weight and its time derivative at `t`. Inside a segment the slope is
    /// that segment's; at an interior knot it is the right-hand slope;
    /// outside the sampled range the weight is clamped and the slope is 0.
    pub fn w_at(&self, t: f64) -> (f64, f64) {
        let n = self.t.len();
        if t < self.t[0] {
            return (self.w[0], 0.0);
        }
        if t >= self.t[n - 1] {
            return (self.w[n - 1], 0.0);
        }
        let i = self.t.partition_point(|&x| x <= t) - 1;
        let (t0, t1, w0, w1) = (self.t[i], self.t[i + 1], self.w[i], self.w[i + 1]);
        let slope = (w1 - w0) / (t1 - t0);
        (w0 + slope * (t - t0), slope)
    }

    pub fn weight(&self, t: f64) -> f64 {
        self.w_at(t).0
    }

    pub fn final_weight(&self) -> f64 {
        self.w[self.w.len() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_interpolation() {
        let tr = WeightTrajectory::from_points(vec![0.0, 0.1], vec![0.0, 1.0]);
        let (w, s) = tr.w_at(0.05);
        assert!((w - 0.5).abs() < 1e-12);
        assert!((s - 10.0).abs() < 1e-9);
    }

    #[test]
    fn clamps_outside_range() {
        let tr = WeightTrajectory::from_points(vec![0.0, 0.1, 0.2], vec![0.0, 1.0, 4.0]);
        assert_eq!(tr.w_at(5.0), (4.0, 0.0));
        assert_eq!(tr.w_at(0.2), (4.0, 0.0));
        assert_eq!(tr.w_at(-1.0), (0.0, 0.0));
    }

    #[test]
    fn knot_uses_right_slope() {
        let tr = WeightTrajectory::from_points(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 4.0]);
        assert_eq!(tr.w_at(1.0), (1.0, 3.0));
        assert_eq!(tr.w_at(0.0), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn slope_matches_finite_difference(ws in prop::collection::vec(0.0f64..50.0, 3..30), u in 0.0f64..1.0) {
            let t: Vec<f64> = (0..ws.len()).map(|i| i as f64 * 0.1).collect();
            let tr = WeightTrajectory::from_points(t, ws.clone());
            let span = tr.end() - tr.start();
            let mut q = tr.start() + u * span;
            let frac = (q / 0.1).fract();
            if !(0.01..0.99).contains(&frac) {
                q = (q / 0.1).floor() * 0.1 + 0.05;
            }
            prop_assume!(q > tr.start() && q < tr.end());
            let eps = 1e-4;
            let fd = (tr.weight(q + eps) - tr.weight(q - eps)) / (2.0 * eps);
            let s = tr.w_at(q).1;
            prop_assert!((fd - s).abs() < 1e-8, "fd {} slope {}", fd, s);
        }
    }
}
