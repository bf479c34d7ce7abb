//! Overpour estimation: how much more lands on the scale after the
//! controller starts retracting, modelled per substance as a quadratic in
//! the predicted weight at retraction, and the inverse that turns a target
//! into the weight at which to start retracting.

mod collect;
mod lstsq;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::signals::Substance;

pub use collect::{collect_overpour, CollectConfig, CollectOutcome, COLLECT_REPS, COLLECT_TARGETS};
pub use lstsq::{lstsq, normal_equation_residuals};

#[derive(Debug, thiserror::Error)]
pub enum OweError {
    #[error("rank-deficient design: {distinct} distinct stop weights, need 3")]
    RankDeficient { distinct: usize },
    #[error("samples mix substances {0} and {1}")]
    MixedSubstances(Substance, Substance),
    #[error("target must be positive and finite, got {0}")]
    BadTarget(f64),
    #[error("stop-weight iteration did not converge; last iterate {last}")]
    NoConvergence { last: f64 },
    #[error("no coefficients for {0}")]
    Missing(Substance),
    #[error("table line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("weights must be positive and match the samples")]
    BadWeights,
    #[error(transparent)]
    Control(#[from] Box<crate::control::ControlError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OweError>;

/// One collection pour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverpourSample {
    pub substance: Substance,
    pub target: f64,
    /// Predicted cumulative weight when retraction began.
    pub w_stop_observed: f64,
    /// Final true weight minus `w_stop_observed`.
    pub w_overpoured: f64,
}

/// `w_over(w) = a w^2 + b w + c` for one substance, plus fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OweCoeffs {
    pub substance: Substance,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rmse: f64,
    pub n: usize,
}

impl OweCoeffs {
    pub fn poly(&self, w: f64) -> f64 {
        (self.a * w + self.b) * w + self.c
    }

    /// Overpour used at run time; never negative.
    pub fn overpour(&self, w: f64) -> f64 {
        self.poly(w).max(0.0)
    }
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_substance(samples: &[OverpourSample]) -> Result<Substance> {
    let first = samples.first().ok_or(OweError::RankDeficient { distinct: 0 })?.substance;
    if let Some(s) = samples.iter().find(|s| s.substance != first) {
        return Err(OweError::MixedSubstances(first, s.substance));
    }
    Ok(first)
}

/// Ordinary least squares on `[w^2, w, 1]` via Householder QR.
pub fn fit_owe(samples: &[OverpourSample]) -> Result<OweCoeffs> {
    fit_owe_weighted(samples, &vec![1.0; samples.len()])
}

/// Weighted least squares: minimizes `sum k_i (y_i - poly(x_i))^2`.
pub fn fit_owe_weighted(samples: &[OverpourSample], weights: &[f64]) -> Result<OweCoeffs> {
    if weights.len() != samples.len() || weights.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(OweError::BadWeights);
    }
    let substance = check_substance(samples)?;
    let xs: Vec<f64> = samples.iter().map(|s| s.w_stop_observed).collect();
    let distinct = distinct_count(&xs);
    if distinct < 3 {
        return Err(OweError::RankDeficient { distinct });
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut rhs = Vec::with_capacity(samples.len());
    for (s, &k) in samples.iter().zip(weights) {
        let r = k.sqrt();
        rows.push([r * s.w_stop_observed * s.w_stop_observed, r * s.w_stop_observed, r]);
        rhs.push(r * s.w_overpoured);
    }
    let [a, b, c] = lstsq(&rows, &rhs).ok_or(OweError::RankDeficient { distinct })?;
    let mut coeffs = OweCoeffs { substance, a, b, c, rmse: 0.0, n: samples.len() };
    let wsum: f64 = weights.iter().sum();
    let sse: f64 = samples.iter().zip(weights).map(|(s, &k)| k * (s.w_overpoured - coeffs.poly(s.w_stop_observed)).powi(2)).sum();
    coeffs.rmse = (sse / wsum).sqrt();
    Ok(coeffs)
}

const FALLBACK_ITERS: usize = 100;
const FALLBACK_DAMPING: f64 = 0.5;
const FALLBACK_TOL: f64 = 1e-12;

/// Weight at which to start retracting so that `w_stop + poly(w_stop)`
/// lands on `target`.
///
/// Takes the root of `a w^2 + (b + 1) w + (c - target)` inside
/// `[0, target]`, the smaller one if both are. Without such a root, iterates
/// `w <- (1 - d) w + d (target - poly(w))` from `target`, clamped to the same
/// interval, for at most 100 steps.
pub fn stop_weight(coeffs: &OweCoeffs, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(OweError::BadTarget(target));
    }
    let (qa, qb, qc) = (coeffs.a, coeffs.b + 1.0, coeffs.c - target);
    let in_range = |w: f64| w.is_finite() && (0.0..=target).contains(&w);
    let mut roots = quadratic_roots(qa, qb, qc);
    roots.retain(|&w| in_range(w));
    roots.sort_by(f64::total_cmp);
    if let Some(&w) = roots.first() {
        return Ok(w);
    }
    let mut w = target;
    for _ in 0..FALLBACK_ITERS {
        let next = ((1.0 - FALLBACK_DAMPING) * w + FALLBACK_DAMPING * (target - coeffs.poly(w))).clamp(0.0, target);
        if (next - w).abs() <= FALLBACK_TOL * target.max(1.0) {
            return Ok(next);
        }
        w = next;
    }
    Err(OweError::NoConvergence { last: w })
}

/// Real roots of `a x^2 + b x + c`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    let mut r = vec![q / a, c / q];
    // one Newton step each tightens the self-consistency residual
    for x in &mut r {
        let f = (a * *x + b) * *x + c;
        let d = 2.0 * a * *x + b;
        if d != 0.0 {
            *x -= f / d;
        }
    }
    r
}

/// Per-substance coefficients, stored as text with one
/// `substance a b c rmse n` line each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OweTable {
    pub coeffs: BTreeMap<Substance, OweCoeffs>,
}

impl OweTable {
    pub fn insert(&mut self, c: OweCoeffs) {
        self.coeffs.insert(c.substance, c);
    }

    pub fn get(&self, s: Substance) -> Result<&OweCoeffs> {
        self.coeffs.get(&s).ok_or(OweError::Missing(s))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("substance a b c rmse n\n");
        for c in self.coeffs.values() {
            // `{:?}` on f64 prints the shortest round-tripping form
            writeln!(out, "{} {:?} {:?} {:?} {:?} {}", c.substance, c.a, c.b, c.c, c.rmse, c.n).expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<OweTable> {
        let mut table = OweTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("substance")) {
                continue;
            }
            let bad = |detail: String| OweError::Parse { line: i + 1, detail };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let substance: Substance = f[0].parse().map_err(bad)?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            let n = f[5].parse::<usize>().map_err(|e| bad(format!("`{}`: {e}", f[5])))?;
            table.insert(OweCoeffs { substance, a: num(f[1])?, b: num(f[2])?, c: num(f[3])?, rmse: num(f[4])?, n });
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<OweTable> {
        OweTable::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coeffs(a: f64, b: f64, c: f64) -> OweCoeffs {
        OweCoeffs { substance: Substance::Water, a, b, c, rmse: 0.0, n: 0 }
    }

    fn samples(points: &[(f64, f64)]) -> Vec<OverpourSample> {
        points
            .iter()
            .map(|&(x, y)| OverpourSample { substance: Substance::Water, target: x, w_stop_observed: x, w_overpoured: y })
            .collect()
    }

    #[test]
    fn recovers_planted_quadratic() {
        let pts: Vec<(f64, f64)> = (0..24).map(|i| {
            let x = 25.0 + 3.5 * i as f64;
            (x, 0.002 * x * x + 0.05 * x + 1.0)
        }).collect();
        let c = fit_owe(&samples(&pts)).unwrap();
        assert!((c.a - 0.002).abs() < 1e-8 && (c.b - 0.05).abs() < 1e-8 && (c.c - 1.0).abs() < 1e-8, "{c:?}");
        assert!(c.rmse < 1e-9);
        assert_eq!(c.n, 24);
    }

    #[test]
    fn constant_data_gives_constant_fit() {
        let c = fit_owe(&samples(&[(30.0, 4.0), (50.0, 4.0), (70.0, 4.0), (90.0, 4.0)])).unwrap();
        assert!(c.a.abs() < 1e-12 && c.b.abs() < 1e-10 && (c.c - 4.0).abs() < 1e-8, "{c:?}");
    }

    #[test]
    fn too_few_abscissae_is_rank_error() {
        let err = fit_owe(&samples(&[(30.0, 1.0), (30.0, 2.0), (40.0, 3.0), (40.0, 3.5)])).unwrap_err();
        assert!(matches!(err, OweError::RankDeficient { distinct: 2 }));
        assert!(fit_owe(&[]).is_err());
    }

    #[test]
    fn mixed_substances_rejected() {
        let mut s = samples(&[(30.0, 1.0), (40.0, 2.0), (50.0, 3.0)]);
        s[1].substance = Substance::Oil;
        assert!(matches!(fit_owe(&s), Err(OweError::MixedSubstances(..))));
    }

    #[test]
    fn duplicates_match_weights() {
        let base = [(30.0, 5.1), (45.0, 6.3), (60.0, 9.0), (80.0, 12.5), (100.0, 17.2)];
        let mult = [1usize, 3, 1, 2, 1];
        let mut dup = Vec::new();
        for (p, &m) in base.iter().zip(&mult) {
            for _ in 0..m {
                dup.push(*p);
            }
        }
        let a = fit_owe(&samples(&dup)).unwrap();
        let w: Vec<f64> = mult.iter().map(|&m| m as f64).collect();
        let b = fit_owe_weighted(&samples(&base), &w).unwrap();
        // weighted normal equations solved directly as an independent check
        let mut ata = [[0.0; 3]; 3];
        let mut aty = [0.0; 3];
        for (&(x, y), &k) in base.iter().zip(&w) {
            let row = [x * x, x, 1.0];
            for i in 0..3 {
                aty[i] += k * row[i] * y;
                for j in 0..3 {
                    ata[i][j] += k * row[i] * row[j];
                }
            }
        }
        let direct = solve3(ata, aty);
        for (u, v) in [(a.a, b.a), (a.b, b.b), (a.c, b.c)] {
            assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
        }
        for (u, v) in [(b.a, direct[0]), (b.b, direct[1]), (b.c, direct[2])] {
            assert!((u - v).abs() <= 1e-7 * (1.0 + v.abs()), "{u} vs {v}");
        }
    }

    fn solve3(mut m: [[f64; 3]; 3], mut y: [f64; 3]) -> [f64; 3] {
        for i in 0..3 {
            let p = (i..3).max_by(|&a, &b| m[a][i].abs().total_cmp(&m[b][i].abs())).unwrap();
            m.swap(i, p);
            y.swap(i, p);
            for r in i + 1..3 {
                let f = m[r][i] / m[i][i];
                for c in i..3 {
                    m[r][c] -= f * m[i][c];
                }
                y[r] -= f * y[i];
            }
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            x[i] = (y[i] - (i + 1..3).map(|c| m[i][c] * x[c]).sum::<f64>()) / m[i][i];
        }
        x
    }

    #[test]
    fn stop_weight_examples() {
        assert!((stop_weight(&coeffs(0.0, 0.0, 5.0), 50.0).unwrap() - 45.0).abs() < 1e-12);
        assert!((stop_weight(&coeffs(0.0, 1.0, 0.0), 100.0).unwrap() - 50.0).abs() < 1e-12);
        let c = coeffs(0.001, 0.1, 2.0);
        let w = stop_weight(&c, 75.0).unwrap();
        // quadratic formula for 0.001 w^2 + 1.1 w - 73
        let oracle = (-1.1 + (1.1f64 * 1.1 + 4.0 * 0.001 * 73.0).sqrt()) / (2.0 * 0.001);
        assert!((w - oracle).abs() < 1e-9);
        assert!((w - 62.78).abs() < 0.01, "{w}");
        assert!((w + c.poly(w) - 75.0).abs() < 1e-9);
    }

    #[test]
    fn stop_weight_rejects_bad_target() {
        assert!(matches!(stop_weight(&coeffs(0.0, 0.0, 1.0), 0.0), Err(OweError::BadTarget(_))));
        assert!(stop_weight(&coeffs(0.0, 0.0, 1.0), f64::NAN).is_err());
    }

    #[test]
    fn stop_weight_falls_back_when_no_root_in_range() {
        // overpour already exceeds the target at w = 0: clamps to 0
        let w = stop_weight(&coeffs(0.0, 0.0, 80.0), 50.0).unwrap();
        assert_eq!(w, 0.0);
        // strongly negative curvature, no real root: still lands in range
        let c = coeffs(-1.0, 0.0, -1.0);
        let w = stop_weight(&c, 10.0).unwrap();
        assert!((0.0..=10.0).contains(&w));
    }

    #[test]
    fn fallback_reports_last_iterate() {
        // w + poly(w) - target is a tiny positive constant, so each damped
        // step moves only 5e-4 and 100 steps cannot reach the clamp
        let c = coeffs(0.0, -1.0, 100.001);
        match stop_weight(&c, 100.0) {
            Err(OweError::NoConvergence { last }) => assert!((last - (100.0 - 100.0 * 0.0005)).abs() < 1e-9, "{last}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = OweTable::default();
        t.insert(OweCoeffs { substance: Substance::Rice, a: 1e-3, b: 0.1 / 3.0, c: -0.25, rmse: 1.5, n: 24 });
        t.insert(OweCoeffs { substance: Substance::Water, a: 0.0, b: 0.0, c: 3.0, rmse: 0.0, n: 3 });
        let text = t.to_text();
        assert!(text.starts_with("substance a b c rmse n\n"));
        assert_eq!(OweTable::from_text(&text).unwrap(), t);
        assert!(OweTable::from_text("water 1 2 3\n").is_err());
        assert!(matches!(t.get(Substance::Oil), Err(OweError::Missing(_))));
    }

    proptest! {
        #[test]
        fn stop_weight_is_self_consistent(a in 0.0f64..0.01, b in 0.0f64..0.5, c in 0.0f64..10.0, target in 20.0f64..150.0) {
            let k = coeffs(a, b, c);
            prop_assume!(c < target);
            let w = stop_weight(&k, target).unwrap();
            prop_assert!((0.0..=target).contains(&w));
            prop_assert!((w + k.poly(w) - target).abs() < 1e-9);
        }

        #[test]
        fn residuals_are_orthogonal(ys in proptest::collection::vec(-5.0f64..30.0, 6..30)) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (30.0 + 4.0 * i as f64, y)).collect();
            let c = fit_owe(&samples(&pts)).unwrap();
            let rows: Vec<[f64; 3]> = pts.iter().map(|&(x, _)| [x * x, x, 1.0]).collect();
            let rhs: Vec<f64> = pts.iter().map(|&(_, y)| y).collect();
            for v in normal_equation_residuals(&rows, &rhs, [c.a, c.b, c.c]) {
                prop_assert!(v.abs() < 1e-9, "{v}");
            }
        }
    }
}
