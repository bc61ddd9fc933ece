//! Local cubic Lagrange interpolation on non-uniform nodes.

/// Index of the first of four stencil nodes around `x`.
fn stencil_start(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    assert!(n >= 4, "need at least four nodes");
    let j = match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(j) => j,
        Err(j) => j.saturating_sub(1),
    };
    j.saturating_sub(1).min(n - 4)
}

fn weights(xs: &[f64], s: usize, x: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for (a, wa) in w.iter_mut().enumerate() {
        for b in 0..4 {
            if a != b {
                *wa *= (x - xs[s + b]) / (xs[s + a] - xs[s + b]);
            }
        }
    }
    w
}

pub fn cubic(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let s = stencil_start(xs, x);
    let w = weights(xs, s, x);
    (0..4).map(|k| w[k] * ys[s + k]).sum()
}

/// Tensor-product cubic interpolation of a row-major field `u[i1 * n2 + i2]`.
pub fn cubic2(x1s: &[f64], x2s: &[f64], u: &[f64], x1: f64, x2: f64) -> f64 {
    let n2 = x2s.len();
    let s1 = stencil_start(x1s, x1);
    let w1 = weights(x1s, s1, x1);
    let s2 = stencil_start(x2s, x2);
    let w2 = weights(x2s, s2, x2);
    let mut acc = 0.0;
    for a in 0..4 {
        let row = (s1 + a) * n2;
        let mut r = 0.0;
        for b in 0..4 {
            r += w2[b] * u[row + s2 + b];
        }
        acc += w1[a] * r;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).powi(2)).collect();
        let f = |x: f64| 2.0 - x + 0.5 * x * x - 0.1 * x * x * x;
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        for &x in &[0.01, 0.5, 3.3, 9.0, 9.8] {
            assert!((cubic(&xs, &ys, x) - f(x)).abs() < 1e-10);
        }
    }
}
