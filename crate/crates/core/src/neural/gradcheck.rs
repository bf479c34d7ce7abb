/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + step;
            let up = f(&v);
            v[i] = orig - step;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps pairs of near-zero
/// gradients from reading as large relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n, floor)).fold(0.0, f64::max)
}
