//! Fully connected layer, L2 normalisation and row-wise log-softmax.

/// `y = W x + b` with `W` of shape `out × in`, row-major.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * n..(i + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward(w: &[f64], x: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut dx = vec![0.0; n];
    let mut dw = vec![0.0; w.len()];
    for (i, &d) in dy.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for j in 0..n {
            dx[j] += row[j] * d;
            dw[i * n + j] = x[j] * d;
        }
    }
    (dx, dw, dy.to_vec())
}

/// Unit vector along `x` and the original norm. A zero vector maps to the
/// first basis vector, with zero gradient.
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; x.len()];
        if let Some(first) = e.first_mut() {
            *first = 1.0;
        }
        return (e, 0.0);
    }
    (x.iter().map(|v| v / norm).collect(), norm)
}

/// `(I - e eᵀ) de / ‖x‖`, the gradient of `x / ‖x‖`.
pub fn l2_normalize_backward(e: &[f64], norm: f64, de: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; e.len()];
    }
    let radial: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
    e.iter().zip(de).map(|(ei, di)| (di - ei * radial) / norm).collect()
}

/// Log-softmax of every row of a `rows × cols` matrix.
pub fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

/// Gradient of [`log_softmax_rows`] given its output.
pub fn log_softmax_rows_backward(logp: &[f64], cols: usize, dy: &[f64]) -> Vec<f64> {
    let mut dx = Vec::with_capacity(logp.len());
    for (lp, d) in logp.chunks_exact(cols).zip(dy.chunks_exact(cols)) {
        let s: f64 = d.iter().sum();
        dx.extend(lp.iter().zip(d).map(|(l, g)| g - l.exp() * s));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_unit_and_orthogonal_gradient() {
        let x = [3.0, -4.0, 12.0];
        let (e, n) = l2_normalize(&x);
        assert_eq!(n, 13.0);
        assert!((e.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
        let g = l2_normalize_backward(&e, n, &[0.3, 1.0, -2.0]);
        let dot: f64 = g.iter().zip(&e).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        // radial direction is annihilated
        let g = l2_normalize_backward(&e, n, &e);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let lp = log_softmax_rows(&[1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0], 3);
        for row in lp.chunks(3) {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(lp.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dense_gradients_by_finite_differences() {
        let w = [0.5, -1.0, 2.0, 0.1, 0.3, -0.7];
        let b = [0.2, -0.4];
        let x = [1.0, 2.0, -0.5];
        let dy = [0.7, -1.3];
        let (dx, dw, db) = dense_backward(&w, &x, &dy);
        let f = |w: &[f64], x: &[f64]| dense_forward(w, &b, x).iter().zip(&dy).map(|(a, c)| a * c).sum::<f64>();
        for i in 0..3 {
            let mut xp = x;
            xp[i] += 1e-6;
            let mut xm = x;
            xm[i] -= 1e-6;
            assert!(((f(&w, &xp) - f(&w, &xm)) / 2e-6 - dx[i]).abs() < 1e-8);
        }
        for i in 0..6 {
            let mut wp = w;
            wp[i] += 1e-6;
            let mut wm = w;
            wm[i] -= 1e-6;
            assert!(((f(&wp, &x) - f(&wm, &x)) / 2e-6 - dw[i]).abs() < 1e-8);
        }
        assert_eq!(db, dy.to_vec());
    }
}
