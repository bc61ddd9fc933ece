//! One-dimensional quadrature: globally adaptive Gauss-Kronrod (7/15) and the
//! composite Bode rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

struct Seg {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Seg {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Seg {}
impl PartialOrd for Seg {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Seg {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.partial_cmp(&o.err).unwrap_or(Ordering::Equal)
    }
}

/// Adaptive integral of `f` over `[a, b]` split first into `panels` equal
/// pieces. Stops when the summed error estimate drops below
/// `max(abs_tol, rel_tol |I|)` or `max_segments` is hit.
pub fn integrate_panels<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    abs_tol: f64,
    rel_tol: f64,
) -> f64 {
    let panels = panels.max(1);
    let max_segments = 20_000 + 4 * panels;
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut err = 0.0;
    let h = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + h * p as f64;
        let hi = if p + 1 == panels { b } else { lo + h };
        let (v, e) = gk15(&mut f, lo, hi);
        total += v;
        err += e;
        heap.push(Seg { a: lo, b: hi, val: v, err: e });
    }
    while err > abs_tol.max(rel_tol * total.abs()) && heap.len() < max_segments {
        let s = heap.pop().unwrap();
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            heap.push(s);
            break;
        }
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        total += v1 + v2 - s.val;
        err += e1 + e2 - s.err;
        heap.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        heap.push(Seg { a: m, b: s.b, val: v2, err: e2 });
    }
    total
}

pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    integrate_panels(f, a, b, 1, abs_tol, rel_tol)
}

/// Composite Bode nodes and weights on `[0, 1]`; `nodes` must be `4m + 1`.
pub fn bode_rule(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(nodes >= 5 && (nodes - 1) % 4 == 0, "Bode rule needs 4m+1 nodes");
    let intervals = nodes - 1;
    let h = 1.0 / intervals as f64;
    let x: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
    let mut w = vec![0.0; nodes];
    for panel in 0..intervals / 4 {
        let i = 4 * panel;
        for (k, c) in [7.0, 32.0, 12.0, 32.0, 7.0].iter().enumerate() {
            w[i + k] += 2.0 * h / 45.0 * c;
        }
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_smooth_and_oscillatory() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-14, 1e-14);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
        let v = integrate_panels(|x| (40.0 * x).sin().powi(2), 0.0, 3.0, 30, 1e-13, 1e-13);
        let exact = 1.5 - (240.0f64).sin() / 160.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn gauss_kronrod_endpoint_singularity() {
        let v = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12, 1e-12);
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bode_is_exact_for_quintics() {
        let (x, w) = bode_rule(9);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(5)).sum();
        assert!((s - 1.0 / 6.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
