//! Small numerical-integration toolbox: Gauss–Legendre rules and deterministic sums.
//!
//! Node/weight pairs are computed once per order by Newton iteration on the Legendre
//! polynomial (standard recipe) and cached. Summations that feed reported norms use
//! fixed-order pairwise reduction so results are reproducible bit-for-bit regardless of
//! how the caller parallelizes the surrounding work.

use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Integrate `f` over [a, b] with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .collect();
        half * pairwise_sum(&terms)
    }

    /// Integrate a complex-valued `f` over [a, b].
    pub fn integrate_complex<F: FnMut(f64) -> Complex64>(
        &self,
        a: f64,
        b: f64,
        mut f: F,
    ) -> Complex64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let terms: Vec<Complex64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| f(mid + half * x) * w)
            .collect();
        pairwise_sum_complex(&terms) * half
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    // Recurrence: (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    // P'_n(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn compute_rule(n: usize) -> GaussRule {
    assert!(n >= 1, "Gauss rule order must be >= 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        // The middle node is exactly 0 for odd orders.
        nodes[n / 2] = 0.0;
        let (_, dp) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    GaussRule { nodes, weights }
}

/// Cached Gauss–Legendre rule of order `n`.
pub fn gauss_legendre(n: usize) -> GaussRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, GaussRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| compute_rule(n)).clone()
}

/// Composite complex quadrature over [a, b]: the interval is split into panels no wider
/// than `max_panel`, each integrated with an `order`-point Gauss rule. Use for integrands
/// with moderate oscillation (panel width should resolve the oscillation length).
pub fn composite_gauss_complex<F: FnMut(f64) -> Complex64>(
    a: f64,
    b: f64,
    order: usize,
    max_panel: f64,
    mut f: F,
) -> Complex64 {
    if b <= a {
        return Complex64::new(0.0, 0.0);
    }
    let rule = gauss_legendre(order);
    let n_panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let width = (b - a) / n_panels as f64;
    let parts: Vec<Complex64> = (0..n_panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == n_panels { b } else { lo + width };
            rule.integrate_complex(lo, hi, &mut f)
        })
        .collect();
    pairwise_sum_complex(&parts)
}

/// Fixed-order pairwise summation (deterministic, improved roundoff over naive loops).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise summation for complex terms.
pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    match xs.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum_complex(&xs[..mid]) + pairwise_sum_complex(&xs[mid..])
        }
    }
}
