//! Small numerical utilities: 3-vectors, Gauss–Legendre quadrature and
//! local polynomial interpolation shared across the reconstruction modules.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

pub fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    add(a, scale(sub(b, a), t))
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
///
/// Computed by Newton iteration on the Legendre polynomial and cached per
/// order; good to machine precision for the orders used here (<= 128).
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n).or_insert_with(|| {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-based initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x.abs();
            nodes[n - 1 - i] = x.abs();
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Box::leak(Box::new((nodes, weights)))
    })
}

/// Legendre polynomial P_n(x) and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss–Legendre integral of `f` over [a, b].
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

/// Composite Gauss–Legendre with panel doubling until the relative change of
/// the result drops below `rel_tol` (with a small absolute floor so that
/// integrals that vanish identically terminate).
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    const ORDER: usize = 16;
    const MAX_PANELS: usize = 256;
    let mut panels = 1;
    let mut prev = integrate(&mut f, a, b, ORDER);
    loop {
        panels *= 2;
        let h = (b - a) / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            sum += integrate(&mut f, a + p as f64 * h, a + (p + 1) as f64 * h, ORDER);
        }
        let scale = sum.abs().max(prev.abs());
        if (sum - prev).abs() <= rel_tol * scale + 1e-300 || panels >= MAX_PANELS {
            return sum;
        }
        prev = sum;
    }
}

/// Value of the cubic Lagrange interpolant through four nodes at `x`.
pub fn lagrange4(xs: &[f64; 4], ys: &[f64; 4], x: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        let mut li = 1.0;
        for j in 0..4 {
            if i != j {
                li *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        sum += ys[i] * li;
    }
    sum
}

/// Weights of the cubic Lagrange basis at `x` for four nodes.
pub fn lagrange4_weights(xs: &[f64; 4], x: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        let mut li = 1.0;
        for j in 0..4 {
            if i != j {
                li *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        out[i] = li;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Order-n rule is exact up to degree 2n-1.
        let v = integrate(|x| x.powi(7) - 3.0 * x.powi(4) + 2.0, -1.0, 3.0, 8);
        let exact = |x: f64| x.powi(8) / 8.0 - 3.0 * x.powi(5) / 5.0 + 2.0 * x;
        assert_abs_diff_eq!(v, exact(3.0) - exact(-1.0), epsilon = 1e-11);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_interval() {
        for n in [4, 16, 64] {
            let (_, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn adaptive_quadrature_hits_tolerance() {
        let v = integrate_adaptive(|x: f64| (-x * x).exp(), -6.0, 6.0, 1e-12);
        assert_abs_diff_eq!(v, std::f64::consts::PI.sqrt(), epsilon = 1e-11);
    }

    #[test]
    fn adaptive_quadrature_of_zero_terminates() {
        assert_eq!(integrate_adaptive(|_| 0.0, 0.0, 1.0, 1e-12), 0.0);
    }

    #[test]
    fn lagrange4_reproduces_cubics() {
        let xs = [0.1, 0.4, 0.9, 1.3];
        let f = |x: f64| 2.0 - x + 3.0 * x * x - 0.5 * x * x * x;
        let ys = [f(xs[0]), f(xs[1]), f(xs[2]), f(xs[3])];
        for &x in &[0.0, 0.25, 0.77, 1.5] {
            assert_abs_diff_eq!(lagrange4(&xs, &ys, x), f(x), epsilon = 1e-12);
        }
    }
}
