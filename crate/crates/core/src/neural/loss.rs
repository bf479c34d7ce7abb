use ndarray::{Array2, Zip};

/// Mean squared error over all elements, with its gradient.
pub fn mse(y: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(y.dim(), target.dim(), "mse shapes");
    let n = y.len().max(1) as f64;
    let diff = y - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff.mapv(|d| 2.0 * d / n))
}

const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy on probabilities `p` against 0/1 labels, averaged,
/// with the gradient with respect to `p`.
pub fn bce(p: &Array2<f64>, label: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(p.dim(), label.dim(), "bce shapes");
    let n = p.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = Zip::from(p).and(label).map_collect(|&p, &y| {
        let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        (q - y) / (q * (1.0 - q)) / n
    });
    (loss / n, grad)
}
