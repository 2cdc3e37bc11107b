//! Return-time functions and the semiflow hypothesis checks: per-branch Hölder
//! regularity of the weighted kernel, expansion in proportion to the return time,
//! summability over countable branch families, the Lorenz-family parameter recipe,
//! and the exponential-tails integral.

use crate::error::{Error, Result};
use crate::maps::{refined_grid_max, Interval, PiecewiseMap, TailFamily};
use crate::quad::{gauss_legendre, pairwise_sum};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

/// The roof function of a suspension: strictly positive on the base interval.
#[derive(Clone)]
pub enum ReturnTime {
    /// τ ≡ c
    Constant(f64),
    /// τ(x) = −ln(x)/λ on (0, 1)
    LorenzLog { lambda: f64 },
    /// Arbitrary positive closure.
    Explicit(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ReturnTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReturnTime::Constant(c) => write!(f, "Constant({c})"),
            ReturnTime::LorenzLog { lambda } => write!(f, "LorenzLog(lambda={lambda})"),
            ReturnTime::Explicit(_) => write!(f, "Explicit{{..}}"),
        }
    }
}

impl ReturnTime {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "constant return time {c} must be positive and finite"
            )));
        }
        Ok(ReturnTime::Constant(c))
    }

    pub fn lorenz_log(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lambda} must be positive and finite"
            )));
        }
        Ok(ReturnTime::LorenzLog { lambda })
    }

    pub fn explicit<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        ReturnTime::Explicit(Arc::new(f))
    }

    /// τ(x); errors when the value is not strictly positive (roofs must be positive).
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let v = match self {
            ReturnTime::Constant(c) => *c,
            ReturnTime::LorenzLog { lambda } => {
                if !(x > 0.0) {
                    return Err(Error::OutsideDomain { x });
                }
                -x.ln() / lambda
            }
            ReturnTime::Explicit(f) => f(x),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "return time at x = {x} is {v}, not strictly positive"
            )));
        }
        Ok(v)
    }

    /// sup of τ over an interval (closed form for the built-in families).
    pub fn sup_on(&self, iv: Interval) -> f64 {
        match self {
            ReturnTime::Constant(c) => *c,
            ReturnTime::LorenzLog { lambda } => -iv.lo.ln() / lambda,
            ReturnTime::Explicit(f) => refined_grid_max(iv, |x| f(x)),
        }
    }

    /// inf of τ over an interval.
    pub fn inf_on(&self, iv: Interval) -> f64 {
        match self {
            ReturnTime::Constant(c) => *c,
            ReturnTime::LorenzLog { lambda } => -iv.hi.ln() / lambda,
            ReturnTime::Explicit(f) => -refined_grid_max(iv, |x| -f(x)),
        }
    }

    /// Closed form of ∫_iv e^(rate·τ) dx when the family admits one.
    pub fn exp_integral_on(&self, iv: Interval, rate: f64) -> Option<f64> {
        match self {
            ReturnTime::Constant(c) => Some(iv.len() * (rate * c).exp()),
            ReturnTime::LorenzLog { lambda } => {
                // e^(rate·τ) = x^(−rate/λ)
                let p = rate / lambda;
                if (1.0 - p).abs() < 1e-14 {
                    Some((iv.hi / iv.lo).ln())
                } else {
                    Some((iv.hi.powf(1.0 - p) - iv.lo.powf(1.0 - p)) / (1.0 - p))
                }
            }
            ReturnTime::Explicit(_) => None,
        }
    }

    /// Linear form (a, b) with sup_{tail branch i} τ = a + b·i, for certified tail sums.
    pub fn tail_sup_linear(&self, family: TailFamily) -> Result<(f64, f64)> {
        match (self, family) {
            (ReturnTime::Constant(c), _) => Ok((*c, 0.0)),
            (ReturnTime::LorenzLog { lambda }, TailFamily::LorenzGeometric { .. }) => {
                // sup over (e^-(i+1), e^-i) of −ln(x)/λ = (i+1)/λ
                Ok((1.0 / lambda, 1.0 / lambda))
            }
            (ReturnTime::LorenzLog { lambda }, TailFamily::DyadicAffine) => {
                // sup over (2^-i, 2^-(i-1)) of −ln(x)/λ = i·ln2/λ
                Ok((0.0, std::f64::consts::LN_2 / lambda))
            }
            (ReturnTime::Explicit(_), _) => Err(Error::InvalidParameter(
                "certified tail bounds need a closed-form return-time family".into(),
            )),
        }
    }

    /// Linear form (a, b) with inf_{tail branch i} τ = a + b·i.
    pub fn tail_inf_linear(&self, family: TailFamily) -> Result<(f64, f64)> {
        match (self, family) {
            (ReturnTime::Constant(c), _) => Ok((*c, 0.0)),
            (ReturnTime::LorenzLog { lambda }, TailFamily::LorenzGeometric { .. }) => {
                // inf over (e^-(i+1), e^-i) of −ln(x)/λ = i/λ
                Ok((0.0, 1.0 / lambda))
            }
            (ReturnTime::LorenzLog { lambda }, TailFamily::DyadicAffine) => {
                // inf over (2^-i, 2^-(i-1)) of −ln(x)/λ = (i−1)·ln2/λ
                let l2 = std::f64::consts::LN_2 / lambda;
                Ok((-l2, l2))
            }
            (ReturnTime::Explicit(_), _) => Err(Error::InvalidParameter(
                "certified tail bounds need a closed-form return-time family".into(),
            )),
        }
    }
}

/// Pass/fail verdicts for the three semiflow conditions.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Verdicts {
    /// Sampled Hölder constants of e^(−zτ)/f′ all finite.
    pub holder: bool,
    /// sup_i σ_i^α·e^(σ·sup τ) < 1 including the certified tail.
    pub expanding: bool,
    /// Σ_i σ_i·e^(σ·sup τ) finite including the certified tail.
    pub summable: bool,
}

/// Full output of the hypothesis checker.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub alpha: f64,
    pub sigma: f64,
    /// Real parts of the sampled twist parameters (grid over [−σ, 0]).
    pub z_grid: Vec<f64>,
    /// Per z-grid node: max over branches of the sampled Hölder constant of e^(−zτ)/f′.
    pub holder_constants: Vec<f64>,
    /// Per listed branch: σ_i^α·e^(σ·sup_{ω_i} τ).
    pub expanding_values: Vec<f64>,
    /// Certified sup over the tail family (0 when there is no tail).
    pub expanding_tail_sup: f64,
    pub expanding_sup: f64,
    /// Σ_i σ_i·e^(σ·sup τ) with certified tail; +∞ when the tail diverges.
    pub sum_value: f64,
    /// ∫ e^(σ·τ) dx with certified tail bound; +∞ when divergent.
    pub tails_integral: f64,
    pub verdicts: Verdicts,
    pub first_failing_branch: Option<usize>,
    /// Smallest iterate length whose worst admissible branch-path contraction product
    /// drops below 1, ignoring branches trapped at an attracting fixed point.
    pub iterate_suggestion: Option<usize>,
    /// Largest exponent in {α, α/2, α/4} at which the iterate's kernel still looks
    /// Hölder under pair sampling (only set when an iterate is suggested).
    pub iterate_alpha: Option<f64>,
}

/// Sampled Hölder-constant estimate of g on (lo, hi): sup over pairs of
/// |g(x)−g(y)|/|x−y|^α, with points stratified toward the endpoints where power-law
/// kernels concentrate their roughness.
fn sample_holder_constant<G: Fn(f64) -> Complex64>(
    g: G,
    iv: Interval,
    alpha: f64,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let len = iv.len();
    let draw = |r: &mut ChaCha8Rng| -> f64 {
        // Squared uniforms pile up near 0; mirror half of them toward the right end.
        let u: f64 = r.random::<f64>();
        let t = u * u;
        let side: bool = r.random::<bool>();
        let frac = if side { t } else { 1.0 - t };
        // Keep strictly inside the open interval.
        iv.lo + len * frac.clamp(1e-12, 1.0 - 1e-12)
    };
    let mut sup = 0.0f64;
    for _ in 0..pairs {
        let x = draw(rng);
        let y = draw(rng);
        if x == y {
            continue;
        }
        let ratio = (g(x) - g(y)).norm() / (x - y).abs().powf(alpha);
        if ratio.is_finite() {
            sup = sup.max(ratio);
        } else {
            return f64::INFINITY;
        }
    }
    sup
}

/// The twisted kernel g_z = e^(−zτ)/f′ on one branch.
fn twisted_kernel<'a>(
    map: &'a PiecewiseMap,
    tau: &'a ReturnTime,
    branch_id: usize,
    z: Complex64,
) -> impl Fn(f64) -> Complex64 + 'a {
    move |x: f64| {
        let b = map.branch(branch_id).expect("branch id validated by caller");
        let t = tau.evaluate(x).unwrap_or(f64::NAN);
        (-z * t).exp() / b.derivative(x)
    }
}

/// Locate an attracting fixed point of a branch inside its closed domain, if any.
/// Branches trapped at such a point can never contribute to an expanding iterate.
fn has_attracting_fixed_point(map: &PiecewiseMap, branch_id: usize) -> bool {
    let b = match map.branch(branch_id) {
        Ok(b) => b,
        Err(_) => return false,
    };
    let (lo, hi) = (b.domain.lo, b.domain.hi);
    let g = |x: f64| b.forward(x) - x;
    // Endpoint fixed points first (the common case: x = 1 for power-law branches).
    for x in [lo, hi] {
        if g(x).abs() <= 1e-9 * x.abs().max(1.0) && b.derivative(x).abs() < 1.0 {
            return true;
        }
    }
    // Interior: scan for sign changes and bisect.
    let n = 64;
    let step = (hi - lo) / n as f64;
    let mut prev = g(lo);
    for k in 1..=n {
        let x = lo + step * k as f64;
        let cur = g(x);
        if prev == 0.0 || prev.signum() != cur.signum() {
            let (mut a, mut c) = (x - step, x);
            for _ in 0..80 {
                let m = 0.5 * (a + c);
                if g(a).signum() == g(m).signum() {
                    a = m;
                } else {
                    c = m;
                }
            }
            let root = 0.5 * (a + c);
            if b.derivative(root).abs() < 1.0 {
                return true;
            }
        }
        prev = cur;
    }
    false
}

/// Smallest n such that every admissible n-step branch path (through branches not
/// trapped at an attracting fixed point) has contraction product below 1. Searches up
/// to length 64; None when the map is already uniformly expanding or no such n exists
/// within the search window.
fn iterate_suggestion(map: &PiecewiseMap) -> Result<Option<usize>> {
    let n_br = map.n_branches();
    let mut sigmas = Vec::with_capacity(n_br);
    for i in 0..n_br {
        sigmas.push(map.branch_contraction(i)?);
    }
    let max_sigma = sigmas.iter().cloned().fold(0.0, f64::max);
    if max_sigma < 1.0 {
        return Ok(None);
    }
    let included: Vec<bool> = (0..n_br)
        .map(|i| !has_attracting_fixed_point(map, i))
        .collect();
    // Adjacency: i → j when f(ω_i) overlaps ω_j with positive measure.
    let mut adj = vec![Vec::new(); n_br];
    for i in 0..n_br {
        if !included[i] {
            continue;
        }
        let img = map.branch(i)?.image;
        for (j, inc) in included.iter().enumerate() {
            if *inc && img.intersect(&map.branch(j)?.domain).is_some() {
                adj[i].push(j);
            }
        }
    }
    // best[j] = max product over admissible k-step paths ending at branch j.
    let mut best: Vec<f64> = (0..n_br)
        .map(|j| if included[j] { sigmas[j] } else { f64::NEG_INFINITY })
        .collect();
    for k in 1..=64usize {
        let worst = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if worst < 1.0 && worst > f64::NEG_INFINITY {
            return Ok(Some(k));
        }
        let mut next = vec![f64::NEG_INFINITY; n_br];
        for i in 0..n_br {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            for &j in &adj[i] {
                next[j] = next[j].max(best[i] * sigmas[j]);
            }
        }
        best = next;
    }
    Ok(None)
}

/// Verify the three semiflow conditions at exponent `alpha` and abscissa `sigma`, with
/// the twist sampled at `z_samples` real points spanning [−σ, 0].
pub fn check_conditions(
    map: &PiecewiseMap,
    tau: &ReturnTime,
    alpha: f64,
    sigma: f64,
    z_samples: usize,
) -> Result<HypothesisReport> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must lie in (0, 1)"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma = {sigma} must be strictly positive"
        )));
    }
    if z_samples < 2 {
        return Err(Error::InvalidParameter(
            "z_samples must be at least 2".into(),
        ));
    }

    let n_br = map.n_branches();
    let pairs_per_branch = 10_000usize;

    // (a) Hölder constants of e^(−zτ)/f′ across the real twist grid.
    let z_grid: Vec<f64> = (0..z_samples)
        .map(|j| -sigma + sigma * j as f64 / (z_samples - 1) as f64)
        .collect();
    let mut holder_constants = Vec::with_capacity(z_samples);
    for (zi, &zre) in z_grid.iter().enumerate() {
        let z = Complex64::new(zre, 0.0);
        let mut sup = 0.0f64;
        for i in 0..n_br {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001 + (zi * n_br + i) as u64);
            let b = map.branch(i)?;
            let h = sample_holder_constant(
                twisted_kernel(map, tau, i, z),
                b.domain,
                alpha,
                pairs_per_branch,
                &mut rng,
            );
            sup = sup.max(h);
        }
        holder_constants.push(sup);
    }
    let holder_ok = holder_constants.iter().all(|h| h.is_finite());

    // (b) Per-branch expansion-vs-return-time values plus the certified tail sup.
    let mut expanding_values = Vec::with_capacity(n_br);
    for i in 0..n_br {
        let b = map.branch(i)?;
        let sig = map.branch_contraction(i)?;
        let tau_sup = tau.sup_on(b.domain);
        expanding_values.push(sig.powf(alpha) * (sigma * tau_sup).exp());
    }
    let expanding_tail_sup = match map.tail() {
        Some(t) => {
            let lin = tau.tail_sup_linear(t.family)?;
            t.weighted_sigma_sup(alpha, lin, sigma)
        }
        None => 0.0,
    };
    let expanding_sup = expanding_values
        .iter()
        .cloned()
        .fold(expanding_tail_sup, f64::max);
    let first_failing_branch = expanding_values.iter().position(|&v| v >= 1.0);
    let expanding_ok = expanding_sup < 1.0 && expanding_tail_sup.is_finite();

    // (c) Summability with certified tail.
    let listed_terms: Vec<f64> = (0..n_br)
        .map(|i| {
            let b = map.branch(i).expect("index in range");
            let sig = map.branch_contraction(i).expect("validated above");
            sig * (sigma * tau.sup_on(b.domain)).exp()
        })
        .collect();
    let tail_sum = match map.tail() {
        Some(t) => {
            let lin = tau.tail_sup_linear(t.family)?;
            match t.weighted_sigma_sum(lin, sigma) {
                Ok(s) => s,
                Err(Error::DivergentTails(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        }
        None => 0.0,
    };
    let sum_value = pairwise_sum(&listed_terms) + tail_sum;
    let summable = sum_value.is_finite();

    let tails_integral = match exp_tails(map, tau, sigma) {
        Ok(v) => v,
        Err(Error::DivergentTails(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };

    // Iterate suggestion when the map is not uniformly expanding, with a Hölder
    // re-check of the iterated kernel at falling exponents.
    let suggestion = iterate_suggestion(map)?;
    let iterate_alpha = match suggestion {
        Some(n) => iterate_holder_recheck(map, tau, alpha, n)?,
        None => None,
    };

    Ok(HypothesisReport {
        alpha,
        sigma,
        z_grid,
        holder_constants,
        expanding_values,
        expanding_tail_sup,
        expanding_sup,
        sum_value,
        tails_integral,
        verdicts: Verdicts {
            holder: holder_ok,
            expanding: expanding_ok,
            summable,
        },
        first_failing_branch,
        iterate_suggestion: suggestion,
        iterate_alpha,
    })
}

/// Sampled Hölder probe of the n-th iterate's kernel 1/(f^n)′ at exponents
/// {α, α/2, α/4}: an exponent passes when close pairs do not produce materially larger
/// ratio estimates than distant pairs (blow-up at short range signals a failed
/// exponent). Returns the largest passing exponent.
fn iterate_holder_recheck(
    map: &PiecewiseMap,
    _tau: &ReturnTime,
    alpha: f64,
    n: usize,
) -> Result<Option<f64>> {
    // Kernel of the iterate along admissible orbits: product of 1/f′ along n steps.
    let kernel = |x: f64| -> Option<f64> {
        let mut v = 1.0;
        let mut y = x;
        for _ in 0..n {
            let id = map.locate(y).ok()?;
            let b = map.branch(id).ok()?;
            v /= b.derivative(y);
            y = b.forward(y);
        }
        Some(v)
    };
    for &scale in &[1.0, 0.5, 0.25] {
        let a = alpha * scale;
        let mut rng = ChaCha8Rng::seed_from_u64(0x17e7_a7e0 + (scale * 100.0) as u64);
        let mut near_sup = 0.0f64;
        let mut far_sup = 0.0f64;
        let omega = map.omega();
        for _ in 0..20_000 {
            let x = omega.lo + omega.len() * rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9);
            let near = 1e-6 * omega.len() * (0.5 + rng.random::<f64>());
            let far = omega.len() * (0.05 + 0.5 * rng.random::<f64>());
            for (dist, sup) in [(near, &mut near_sup), (far, &mut far_sup)] {
                let y = x + dist;
                if let (Some(gx), Some(gy)) = (kernel(x), kernel(y)) {
                    let r = (gx - gy).abs() / dist.powf(a);
                    if r.is_finite() {
                        *sup = sup.max(r);
                    }
                }
            }
        }
        if far_sup > 0.0 && near_sup <= 4.0 * far_sup {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// The §-recipe for the power-law family: exponent and largest usable abscissa.
/// Returns (alpha, sigma_max) with alpha = min{gamma, (1−β)/(2−β)} and
/// sigma_max = alpha·λ·(1−β).
pub fn lorenz_params(lambda: f64, beta: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta = {beta} must lie in (0, 1)"
        )));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must lie in (0, 1)"
        )));
    }
    let alpha = gamma.min((1.0 - beta) / (2.0 - beta));
    let sigma_max = alpha * lambda * (1.0 - beta);
    // Consequence check: sigma_max ≤ λ(1−β−α) holds because α ≤ (1−β)/(2−β).
    debug_assert!(sigma_max <= lambda * (1.0 - beta - alpha) + 1e-12);
    Ok((alpha, sigma_max))
}

/// ∫_Ω e^(σ·τ) dx: closed forms per listed branch where available (quadrature
/// otherwise), plus the certified tail bound Σ |ω_i|·e^(σ·sup τ). Divergent tails are
/// an error.
pub fn exp_tails(map: &PiecewiseMap, tau: &ReturnTime, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma = {sigma} must be strictly positive"
        )));
    }
    let mut terms = Vec::with_capacity(map.n_branches() + 1);
    let rule = gauss_legendre(16);
    for b in map.branches() {
        let v = match tau.exp_integral_on(b.domain, sigma) {
            Some(v) => v,
            None => rule.integrate(b.domain.lo, b.domain.hi, |x| {
                (sigma * tau.evaluate(x).unwrap_or(f64::NAN)).exp()
            }),
        };
        if !v.is_finite() {
            return Err(Error::DivergentTails(format!(
                "branch integral over ({}, {}) is not finite",
                b.domain.lo, b.domain.hi
            )));
        }
        terms.push(v);
    }
    if let Some(t) = map.tail() {
        let lin = tau.tail_sup_linear(t.family)?;
        terms.push(t.weighted_len_sum(lin, sigma)?);
    }
    Ok(pairwise_sum(&terms))
}
