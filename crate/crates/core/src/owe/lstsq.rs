/// Least squares for a tall `n x 3` design by Householder QR. `None` when
/// the design is numerically rank deficient.
pub fn lstsq(rows: &[[f64; 3]], rhs: &[f64]) -> Option<[f64; 3]> {
    let n = rows.len();
    if n < 3 || rhs.len() != n {
        return None;
    }
    // column-major copy
    let mut a: Vec<Vec<f64>> = (0..3).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut y = rhs.to_vec();
    let scale: f64 = a.iter().map(|c| norm(c)).fold(0.0, f64::max);
    for k in 0..3 {
        let alpha = norm(&a[k][k..]);
        if alpha <= 1e-13 * scale {
            return None;
        }
        let sign = if a[k][k] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] += sign * alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let d: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
            let f = 2.0 * d / vv;
            for (c, p) in col.iter_mut().zip(&v) {
                *c -= f * p;
            }
        };
        for col in a.iter_mut().skip(k) {
            reflect(&mut col[k..]);
        }
        reflect(&mut y[k..]);
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|j| a[j][i] * x[j]).sum();
        x[i] = (y[i] - s) / a[i][i];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `X^T (y - X beta)` with each entry divided by `|X_j| |y|`, so the
/// optimality check is independent of the data's units.
pub fn normal_equation_residuals(rows: &[[f64; 3]], rhs: &[f64], beta: [f64; 3]) -> [f64; 3] {
    let resid: Vec<f64> = rows.iter().zip(rhs).map(|(r, &y)| y - (r[0] * beta[0] + r[1] * beta[1] + r[2] * beta[2])).collect();
    let ynorm = norm(rhs).max(f64::MIN_POSITIVE);
    std::array::from_fn(|j| {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let dot: f64 = col.iter().zip(&resid).map(|(c, e)| c * e).sum();
        dot / (norm(&col).max(f64::MIN_POSITIVE) * ynorm)
    })
}
