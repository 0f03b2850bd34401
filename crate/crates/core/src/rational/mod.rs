//! Best uniform rational approximation of `x^γ` on `[ε, 1]`.
//!
//! The approximant is found by successive interval length adjustment: the
//! `2m + 1` interpolation nodes split `[ε, 1]` into `2m + 2` intervals, the
//! type `(m, m)` rational interpolant through the nodes is formed in
//! barycentric form, and interval lengths are rescaled until the local error
//! maxima agree. The result is then converted to the factored form
//! `a Π(x − c_i) / (b Π(x − d_j))`.

mod factors;

pub use factors::{Factor, OperatorFactors};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;
const MAX_ITERATIONS: usize = 100;
const TARGET_SPREAD: f64 = 1e-3;
const EQUIOSCILLATION_SPREAD: f64 = 0.05;
const DAMPING: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct RationalApproximant {
    pub gamma: f64,
    pub degree: usize,
    pub epsilon: f64,
    /// All `2m + 1` interpolation nodes, increasing.
    pub nodes: Vec<f64>,
    /// The `m + 1` barycentric support points (every other node).
    pub support: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    /// Numerator roots `c_i`.
    pub num_roots: Vec<f64>,
    /// Denominator roots `d_j`.
    pub den_roots: Vec<f64>,
    /// Leading coefficient `a_{m+1}` of the numerator.
    pub num_lead: f64,
    /// Leading coefficient `b_{m+1}` of the denominator.
    pub den_lead: f64,
    pub max_error: f64,
    /// Location and signed value of the error maximum on each interval.
    pub extrema: Vec<(f64, f64)>,
    /// `(max − min) / max` over the local error maxima.
    pub spread: f64,
    pub equioscillating: bool,
    pub iterations: usize,
}

fn target(gamma: f64, x: f64) -> f64 {
    x.powf(gamma)
}

/// Barycentric evaluation `Σ w f/(x − x_i) / Σ w/(x − x_i)`.
fn bary_eval(support: &[f64], values: &[f64], weights: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&xi, &fi), &wi) in support.iter().zip(values).zip(weights) {
        let d = x - xi;
        if d == 0.0 {
            return fi;
        }
        let t = wi / d;
        num += t * fi;
        den += t;
    }
    num / den
}

/// Weights of the type `(m, m)` interpolant with support `xs` that also
/// interpolates at `zs`: null vector of the Loewner matrix.
fn loewner_weights(gamma: f64, xs: &[f64], zs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut l = DMatrix::zeros(n, n);
    for (k, &z) in zs.iter().enumerate() {
        let fz = target(gamma, z);
        for (i, &x) in xs.iter().enumerate() {
            l[(k, i)] = (fz - target(gamma, x)) / (z - x);
        }
    }
    // Row normalization keeps the SVD well scaled.
    for k in 0..zs.len() {
        let nrm = l.row(k).norm();
        if nrm > 0.0 {
            l.row_mut(k).scale_mut(1.0 / nrm);
        }
    }
    let svd = l.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut w: Vec<f64> = vt.row(imin).iter().copied().collect();
    if w[0] < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    w
}

fn log_ratio(it: &Iterate) -> f64 {
    let lo = it
        .extrema
        .iter()
        .map(|e| e.1.abs())
        .fold(f64::INFINITY, f64::min)
        .max(1e-300);
    (it.max_error / lo).ln()
}

struct Iterate {
    nodes: Vec<f64>,
    support: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    extrema: Vec<(f64, f64)>,
    max_error: f64,
    spread: f64,
}

fn build_iterate(gamma: f64, eps: f64, log_lengths: &[f64]) -> Iterate {
    let mut t = eps.ln();
    let mut bounds = vec![t];
    for &l in log_lengths {
        t += l;
        bounds.push(t);
    }
    *bounds.last_mut().unwrap() = 0.0;
    let nodes: Vec<f64> = bounds[1..bounds.len() - 1].iter().map(|t| t.exp()).collect();
    let support: Vec<f64> = nodes.iter().step_by(2).copied().collect();
    let tests: Vec<f64> = nodes.iter().skip(1).step_by(2).copied().collect();
    let weights = loewner_weights(gamma, &support, &tests);
    let values: Vec<f64> = support.iter().map(|&x| target(gamma, x)).collect();
    let err = |t: f64| {
        let x = t.exp();
        target(gamma, x) - bary_eval(&support, &values, &weights, x)
    };
    let extrema: Vec<(f64, f64)> = bounds
        .windows(2)
        .map(|w| {
            let (t, e) = interval_max(&err, w[0], w[1]);
            (t.exp(), e)
        })
        .collect();
    let mags: Vec<f64> = extrema.iter().map(|e| e.1.abs()).collect();
    let hi = mags.iter().cloned().fold(0.0, f64::max);
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
    Iterate {
        nodes,
        support,
        values,
        weights,
        extrema,
        max_error: hi,
        spread,
    }
}

/// Location (in log coordinates) and signed value of the largest `|e|` on `[a, b]`.
fn interval_max(e: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const SAMPLES: usize = 24;
    let h = (b - a) / SAMPLES as f64;
    let mut best = (a, e(a));
    for k in 1..=SAMPLES {
        let t = if k == SAMPLES { b } else { a + h * k as f64 };
        let v = e(t);
        if v.abs() > best.1.abs() {
            best = (t, v);
        }
    }
    // Golden-section refinement of |e| around the best sample.
    let mut lo = (best.0 - h).max(a);
    let mut hi = (best.0 + h).min(b);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = e(x1).abs();
    let mut f2 = e(x2).abs();
    for _ in 0..60 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = e(x1).abs();
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = e(x2).abs();
        }
        if hi - lo < 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let v = e(t);
    if v.abs() > best.1.abs() {
        (t, v)
    } else {
        best
    }
}

type CacheKey = (u64, usize, u64);

/// Memoized [`best_rational_approx`]. Hyperparameter searches rebuild fields
/// many times at a fixed exponent, and the approximant only depends on
/// `(γ, m, ε)`.
pub fn cached_approx(gamma: f64, m: usize, eps: f64) -> Result<Arc<RationalApproximant>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<RationalApproximant>>>> = OnceLock::new();
    let key = (gamma.to_bits(), m, eps.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let r = Arc::new(best_rational_approx(gamma, m, eps)?);
    cache.lock().unwrap().insert(key, r.clone());
    Ok(r)
}

/// Best rational approximation of type `(m, m)` to `x^γ` on `[ε, 1]`.
///
/// Never fails on convergence: when the iteration cap is reached the best
/// iterate is returned with `equioscillating == false`.
pub fn best_rational_approx(gamma: f64, m: usize, eps: f64) -> Result<RationalApproximant> {
    if !(gamma > -1.0 && gamma <= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("exponent {gamma} outside (-1, 1]")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("rational degree must be >= 1".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon {eps} outside (0, 1)")));
    }
    if gamma == 0.0 || gamma == 1.0 {
        return Ok(exact_power(gamma, m, eps));
    }

    let n_int = 2 * m + 2;
    let total = -eps.ln();
    // Chebyshev nodes in log coordinates as the starting partition.
    let n_nodes = 2 * m + 1;
    let mut ts: Vec<f64> = (0..n_nodes)
        .map(|k| {
            let c = (std::f64::consts::PI * (2 * k + 1) as f64 / (2 * n_nodes) as f64).cos();
            eps.ln() + 0.5 * total * (1.0 - c)
        })
        .collect();
    ts.sort_by(f64::total_cmp);
    let mut lengths = Vec::with_capacity(n_int);
    let mut prev = eps.ln();
    for &t in &ts {
        lengths.push(t - prev);
        prev = t;
    }
    lengths.push(-prev);

    let mut cur = build_iterate(gamma, eps, &lengths);
    let mut best = (lengths.clone(), cur.spread);
    let mut step = DAMPING;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && cur.spread > TARGET_SPREAD {
        iterations += 1;
        let mags: Vec<f64> = cur.extrema.iter().map(|e| e.1.abs().max(1e-300)).collect();
        let mean = mags.iter().map(|v| v.ln()).sum::<f64>() / mags.len() as f64;
        let mut next: Vec<f64> = lengths
            .iter()
            .zip(&mags)
            .map(|(&l, &d)| l * (-step * (d.ln() - mean)).exp().clamp(0.5, 2.0))
            .collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|l| *l *= total / s);
        let cand = build_iterate(gamma, eps, &next);
        let ok = cand.max_error.is_finite() && cand.weights.iter().all(|w| w.is_finite());
        if ok && log_ratio(&cand) < log_ratio(&cur) {
            lengths = next;
            cur = cand;
            step = (step * 1.25).min(DAMPING);
            if cur.spread < best.1 {
                best = (lengths.clone(), cur.spread);
            }
        } else {
            step *= 0.5;
            if step < 1e-4 {
                break;
            }
        }
    }
    let lengths = best.0;
    let it = build_iterate(gamma, eps, &lengths);
    finish(gamma, m, eps, it, iterations)
}

fn finish(gamma: f64, m: usize, eps: f64, it: Iterate, iterations: usize) -> Result<RationalApproximant> {
    let num_coef: Vec<f64> = it.weights.iter().zip(&it.values).map(|(w, f)| w * f).collect();
    let num_roots = secular_roots(&it.support, &num_coef, eps);
    let den_roots = secular_roots(&it.support, &it.weights, eps);
    // Leading coefficients from one evaluation point, so a degree drop in
    // either polynomial is handled uniformly.
    let x0 = 1.0;
    let node_poly = |x: f64, coef: &[f64]| -> f64 {
        // Σ coef_i Π_{k≠i} (x − x_k)
        let mut s = 0.0;
        for i in 0..coef.len() {
            let mut p = coef[i];
            for (k, &xk) in it.support.iter().enumerate() {
                if k != i {
                    p *= x - xk;
                }
            }
            s += p;
        }
        s
    };
    let num_lead = if num_roots.len() == m {
        num_coef.iter().sum()
    } else {
        node_poly(x0, &num_coef) / num_roots.iter().map(|c| x0 - c).product::<f64>()
    };
    let den_lead = if den_roots.len() == m {
        it.weights.iter().sum()
    } else {
        node_poly(x0, &it.weights) / den_roots.iter().map(|d| x0 - d).product::<f64>()
    };
    Ok(RationalApproximant {
        gamma,
        degree: m,
        epsilon: eps,
        nodes: it.nodes,
        support: it.support,
        values: it.values,
        weights: it.weights,
        num_roots,
        den_roots,
        num_lead,
        den_lead,
        max_error: it.max_error,
        extrema: it.extrema,
        spread: it.spread,
        equioscillating: it.spread <= EQUIOSCILLATION_SPREAD,
        iterations,
    })
}

/// `x^0 = 1` and `x^1 = x` are rational already.
fn exact_power(gamma: f64, m: usize, eps: f64) -> RationalApproximant {
    let n = m + 1;
    let support: Vec<f64> = (0..n).map(|k| eps + (1.0 - eps) * k as f64 / m as f64).collect();
    // Lagrange weights reproduce polynomials of degree <= m.
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            1.0 / (0..n)
                .filter(|&k| k != i)
                .map(|k| support[i] - support[k])
                .product::<f64>()
        })
        .collect();
    let values: Vec<f64> = support.iter().map(|&x| target(gamma, x)).collect();
    let (num_roots, num_lead) = if gamma == 1.0 { (vec![0.0], 1.0) } else { (vec![], 1.0) };
    let extrema = vec![(eps, 0.0), (1.0, 0.0)];
    RationalApproximant {
        gamma,
        degree: m,
        epsilon: eps,
        nodes: support.clone(),
        support,
        values,
        weights,
        num_roots,
        den_roots: vec![],
        num_lead,
        den_lead: 1.0,
        max_error: 0.0,
        extrema,
        spread: 0.0,
        equioscillating: true,
        iterations: 0,
    }
}

/// Real roots of `Σ a_i Π_{k≠i}(x − x_k)` off the support interval.
///
/// For best approximations of `x^γ` all roots are negative, so the secular
/// function `g(x) = Σ a_i / (x − x_i)` is scanned for sign changes on a
/// logarithmic grid of the negative axis and each bracket is bisected. If that
/// does not account for every root, the eigenvalues of `(I − 1aᵀ/aᵀ1) diag(x)`
/// (which are the roots plus a spurious zero) are used instead.
fn secular_roots(xs: &[f64], a: &[f64], eps: f64) -> Vec<f64> {
    let g = |x: f64| -> f64 { a.iter().zip(xs).map(|(ai, xi)| ai / (x - xi)).sum() };
    let asum: f64 = a.iter().sum();
    let scale: f64 = a.iter().map(|v| v.abs()).sum();
    let expected = if asum.abs() > 1e-13 * scale {
        xs.len() - 1
    } else {
        xs.len() - 2
    };

    let t_lo = eps.log10() - 6.0;
    let t_hi = 10.0;
    let steps = 4000;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| -(10f64.powf(t_lo + (t_hi - t_lo) * k as f64 / steps as f64)))
        .collect();
    let mut roots = Vec::new();
    let mut prev = (grid[0], g(grid[0]));
    for &x in &grid[1..] {
        let v = g(x);
        if v == 0.0 {
            roots.push(x);
        } else if prev.1 != 0.0 && v.signum() != prev.1.signum() {
            roots.push(bisect(&g, prev.0, x));
        }
        prev = (x, v);
    }
    if roots.len() == expected {
        roots.sort_by(|a, b| b.total_cmp(a));
        return roots;
    }
    eigen_roots(xs, a, &g)
}

fn bisect(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn eigen_roots(xs: &[f64], a: &[f64], g: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let n = xs.len();
    let asum: f64 = a.iter().sum();
    if asum == 0.0 {
        return Vec::new();
    }
    let mut mat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let proj = if i == j { 1.0 } else { 0.0 } - a[j] / asum;
            mat[(i, j)] = proj * xs[j];
        }
    }
    let eig = mat.complex_eigenvalues();
    let mut vals: Vec<nalgebra::Complex<f64>> = eig.iter().copied().collect();
    // Drop the spurious zero eigenvalue.
    if let Some((k, _)) = vals.iter().enumerate().min_by(|x, y| x.1.norm().total_cmp(&y.1.norm())) {
        vals.remove(k);
    }
    let mut roots: Vec<f64> = vals
        .into_iter()
        .filter(|z| z.im.abs() <= 1e-8 * z.norm().max(1e-300))
        .map(|z| newton_polish(g, z.re))
        .collect();
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

fn newton_polish(g: &dyn Fn(f64) -> f64, mut x: f64) -> f64 {
    for _ in 0..8 {
        let h = 1e-7 * x.abs().max(1e-300);
        let d = (g(x + h) - g(x - h)) / (2.0 * h);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let step = g(x) / d;
        if !step.is_finite() || step.abs() > 0.1 * x.abs().max(1e-300) {
            break;
        }
        x -= step;
    }
    x
}

impl RationalApproximant {
    /// Barycentric evaluation of `r(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        bary_eval(&self.support, &self.values, &self.weights, x)
    }

    /// Evaluation through the factored form.
    pub fn eval_factored(&self, x: f64) -> f64 {
        let num: f64 = self.num_roots.iter().map(|c| x - c).product();
        let den: f64 = self.den_roots.iter().map(|d| x - d).product();
        self.num_lead * num / (self.den_lead * den)
    }

    /// `x^γ − r(x)`.
    pub fn error_at(&self, x: f64) -> f64 {
        target(self.gamma, x) - self.eval(x)
    }

    /// Error sampled at `n` logarithmically spaced points of `[ε, 1]`.
    pub fn error_curve(&self, n: usize) -> Vec<(f64, f64)> {
        let (a, b) = (self.epsilon.ln(), 0.0);
        (0..n)
            .map(|k| {
                let t = if n == 1 {
                    a
                } else {
                    a + (b - a) * k as f64 / (n - 1) as f64
                };
                let x = t.exp();
                (x, self.error_at(x))
            })
            .collect()
    }

    /// True when every root lies strictly left of `ε` on the real axis
    /// (zero is allowed for the exact case `γ = 1`).
    pub fn roots_admissible(&self) -> bool {
        self.num_roots.len() <= self.degree
            && self.den_roots.len() <= self.degree
            && self
                .num_roots
                .iter()
                .chain(&self.den_roots)
                .all(|&r| r.is_finite() && r <= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_error(r: &RationalApproximant, n: usize, log: bool) -> f64 {
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                let x = if log {
                    (r.epsilon.ln() * (1.0 - s)).exp()
                } else {
                    r.epsilon + (1.0 - r.epsilon) * s
                };
                r.error_at(x).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_powers() {
        for m in 1..5 {
            let r = best_rational_approx(1.0, m, 1e-6).unwrap();
            assert!(grid_error(&r, 10_001, false) <= 1e-13);
            assert!(grid_error(&r, 10_001, true) <= 1e-13);
            let r = best_rational_approx(0.0, m, 1e-6).unwrap();
            assert!(grid_error(&r, 1001, true) <= 1e-13);
        }
    }

    #[test]
    fn square_root_equioscillates() {
        let r = best_rational_approx(0.5, 2, 1e-6).unwrap();
        assert!(r.equioscillating, "spread {}", r.spread);
        assert_eq!(r.extrema.len(), 6);
        for w in r.extrema.windows(2) {
            assert!(w[0].1 * w[1].1 < 0.0, "extrema must alternate: {:?}", r.extrema);
        }
        // Every node interpolates exactly.
        for &x in &r.nodes {
            assert!(r.error_at(x).abs() < 1e-12 * r.max_error.max(1e-300) + 1e-14);
        }
    }

    #[test]
    fn error_decreases_with_degree() {
        for gamma in [0.25, 0.5, 0.75, -0.3] {
            let mut prev = f64::INFINITY;
            for m in [1, 2, 4, 6, 8] {
                let r = best_rational_approx(gamma, m, 1e-6).unwrap();
                assert!(r.max_error < prev, "gamma {gamma} m {m}: {} >= {prev}", r.max_error);
                prev = r.max_error;
            }
        }
    }

    #[test]
    fn reported_error_bounds_dense_grid() {
        for (gamma, m) in [(0.5, 2), (0.25, 6), (0.75, 4), (0.225, 6)] {
            let r = best_rational_approx(gamma, m, 1e-6).unwrap();
            assert!(r.equioscillating);
            for log in [false, true] {
                assert!(grid_error(&r, 10_001, log) <= 1.01 * r.max_error);
            }
        }
    }

    #[test]
    fn factored_form_matches_barycentric() {
        for (gamma, m) in [(0.5, 2), (0.5, 4), (0.25, 6), (0.75, 8), (-0.4, 3)] {
            let r = best_rational_approx(gamma, m, 1e-6).unwrap();
            assert_eq!(r.num_roots.len(), m);
            assert_eq!(r.den_roots.len(), m);
            assert!(r.roots_admissible());
            for (x, _) in r.error_curve(500) {
                let (a, b) = (r.eval(x), r.eval_factored(x));
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs(),
                    "gamma {gamma} m {m} x {x}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(best_rational_approx(1.5, 2, 1e-6).is_err());
        assert!(best_rational_approx(0.5, 0, 1e-6).is_err());
        assert!(best_rational_approx(0.5, 2, 1.0).is_err());
    }
}
