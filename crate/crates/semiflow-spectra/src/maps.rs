//! Piecewise-expanding interval maps with open branch domains and certified analytic
//! tails for countable branch families.
//!
//! A map is a finite ordered list of branches; countable families (the power-law and
//! dyadic full-branch families) carry a [`TailDescriptor`] whose geometric sums are
//! evaluated in closed form, so truncation never silently loses mass. Maps are immutable
//! after construction; refinement returns a new map.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Closed numeric tolerance for inverse-branch residual checks.
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-12;

/// An open, bounded, nonempty interval (lo, hi).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "interval ({lo}, {hi}) must be finite and nonempty"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Strict interior membership — endpoints are excluded.
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    /// Intersection as a (possibly empty) closed-logic interval.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo < hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Analytic form of a branch. Built-in families use closed forms everywhere (forward,
/// derivative, inverse, suprema); `Custom` falls back to the provided closures and
/// refined grid scans.
#[derive(Clone)]
pub enum BranchKind {
    /// f(x) = slope·x + intercept
    Affine { slope: f64, intercept: f64 },
    /// f(x) = x^beta with beta in (0,1); domains must stay inside (0, 1].
    Power { beta: f64 },
    /// Arbitrary strictly monotone C¹ branch given by closures.
    Custom {
        forward: RealFn,
        derivative: RealFn,
        inverse: RealFn,
    },
}

impl std::fmt::Debug for BranchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchKind::Affine { slope, intercept } => f
                .debug_struct("Affine")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            BranchKind::Power { beta } => f.debug_struct("Power").field("beta", beta).finish(),
            BranchKind::Custom { .. } => f.write_str("Custom{..}"),
        }
    }
}

/// One monotone branch of a piecewise map: a bijection from its open domain onto its
/// open image.
#[derive(Clone, Debug)]
pub struct Branch {
    pub domain: Interval,
    pub image: Interval,
    kind: BranchKind,
    increasing: bool,
}

impl Branch {
    pub fn new(domain: Interval, kind: BranchKind) -> Result<Self> {
        let (a, b) = (domain.lo, domain.hi);
        let (fa, fb) = match &kind {
            BranchKind::Affine { slope, intercept } => {
                if *slope == 0.0 {
                    return Err(Error::InvalidParameter(
                        "affine branch slope must be nonzero".into(),
                    ));
                }
                (slope * a + intercept, slope * b + intercept)
            }
            BranchKind::Power { beta } => {
                if !(0.0 < *beta && *beta < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "power branch exponent beta = {beta} must lie in (0, 1)"
                    )));
                }
                if a < 0.0 {
                    return Err(Error::InvalidParameter(
                        "power branch domain must stay in (0, 1]".into(),
                    ));
                }
                (a.powf(*beta), b.powf(*beta))
            }
            BranchKind::Custom { forward, .. } => (forward(a), forward(b)),
        };
        let increasing = fb > fa;
        let image = if increasing {
            Interval::new(fa, fb)?
        } else {
            Interval::new(fb, fa)?
        };
        Ok(Self {
            domain,
            image,
            kind,
            increasing,
        })
    }

    pub fn kind(&self) -> &BranchKind {
        &self.kind
    }

    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    /// Forward evaluation (caller guarantees x is in the domain).
    pub fn forward(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, intercept } => slope * x + intercept,
            BranchKind::Power { beta } => x.powf(*beta),
            BranchKind::Custom { forward, .. } => forward(x),
        }
    }

    /// Signed derivative f'(x).
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, .. } => *slope,
            BranchKind::Power { beta } => beta * x.powf(beta - 1.0),
            BranchKind::Custom { derivative, .. } => derivative(x),
        }
    }

    /// Inverse evaluation (caller guarantees y is in the image).
    pub fn inverse(&self, y: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, intercept } => (y - intercept) / slope,
            BranchKind::Power { beta } => y.powf(1.0 / beta),
            BranchKind::Custom { inverse, .. } => inverse(y),
        }
    }

    /// sup over the domain of 1/|f'|, with closed forms for the built-in kinds.
    ///
    /// For `Power` branches 1/f' = x^(1-beta)/beta is increasing, so the supremum sits at
    /// the right endpoint. `Custom` branches are scanned on a 1024-point grid with two
    /// refinement passes around the running argmax.
    pub fn contraction(&self, branch_id: usize) -> Result<f64> {
        match &self.kind {
            BranchKind::Affine { slope, .. } => Ok(1.0 / slope.abs()),
            BranchKind::Power { beta } => {
                Ok(self.domain.hi.powf(1.0 - beta) / beta)
            }
            BranchKind::Custom { derivative, .. } => {
                let g = |x: f64| {
                    let d = derivative(x).abs();
                    if d == 0.0 {
                        f64::INFINITY
                    } else {
                        1.0 / d
                    }
                };
                let sup = refined_grid_max(self.domain, g);
                if !sup.is_finite() {
                    return Err(Error::NonExpandingBranch { branch: branch_id });
                }
                Ok(sup)
            }
        }
    }
}

/// Three-level refined grid maximum: 1024 samples, then two refinement passes around the
/// running argmax (each on the two neighboring sample gaps). The closure endpoints are
/// also evaluated, since a continuous integrand attains its open-interval supremum there.
pub fn refined_grid_max<F: Fn(f64) -> f64>(domain: Interval, f: F) -> f64 {
    let mut lo = domain.lo;
    let mut hi = domain.hi;
    let mut best = f(domain.lo).max(f(domain.hi));
    if best.is_nan() {
        best = f64::NEG_INFINITY;
    }
    for _level in 0..3 {
        let n = 1024;
        let step = (hi - lo) / n as f64;
        let mut arg = lo + 0.5 * step;
        for k in 0..n {
            let x = lo + (k as f64 + 0.5) * step;
            let v = f(x);
            if v > best {
                best = v;
                arg = x;
            }
        }
        lo = (arg - step).max(domain.lo);
        hi = (arg + step).min(domain.hi);
    }
    best
}

/// Closed-form families for certified analytic tails of countable branch systems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailFamily {
    /// Branch i >= i_start: domain (e^-(i+1), e^-i), f(x) = x^beta.
    /// True contraction sup: e^(-i(1-beta))/beta.
    LorenzGeometric { lambda: f64, beta: f64 },
    /// Branch i >= i_start: domain (2^-i, 2^-(i-1)), affine onto (0,1) with slope 2^i.
    /// Contraction sup: 2^-i.
    DyadicAffine,
}

/// Certified description of the branches beyond the stored finite prefix.
#[derive(Clone, Debug)]
pub struct TailDescriptor {
    pub family: TailFamily,
    /// First branch index covered by the tail.
    pub i_start: usize,
    /// Closed-form value of sum_{i >= i_start} sigma_i (unit-weight contraction sum).
    pub tail_sum_bound: f64,
}

/// Sum of a geometric series c·r^i for i >= s, or an error when it diverges.
fn geometric_tail(c: f64, r: f64, s: usize, what: &str) -> Result<f64> {
    if !(r < 1.0) {
        return Err(Error::DivergentTails(format!(
            "{what}: geometric ratio {r} is not below 1"
        )));
    }
    Ok(c * r.powi(s as i32) / (1.0 - r))
}

impl TailDescriptor {
    /// Per-branch contraction supremum sigma_i (closed form).
    pub fn sigma(&self, i: usize) -> f64 {
        match self.family {
            TailFamily::LorenzGeometric { beta, .. } => {
                (-(i as f64) * (1.0 - beta)).exp() / beta
            }
            TailFamily::DyadicAffine => 0.5f64.powi(i as i32),
        }
    }

    /// Branch domain for tail index i.
    pub fn domain(&self, i: usize) -> Interval {
        match self.family {
            TailFamily::LorenzGeometric { .. } => Interval {
                lo: (-(i as f64 + 1.0)).exp(),
                hi: (-(i as f64)).exp(),
            },
            TailFamily::DyadicAffine => Interval {
                lo: 0.5f64.powi(i as i32),
                hi: 0.5f64.powi(i as i32 - 1),
            },
        }
    }

    /// Total Lebesgue mass of the tail domains.
    pub fn domain_mass(&self) -> f64 {
        match self.family {
            TailFamily::LorenzGeometric { .. } => (-(self.i_start as f64)).exp(),
            TailFamily::DyadicAffine => 0.5f64.powi(self.i_start as i32 - 1),
        }
    }

    /// (c, r) with sigma_i = c·r^i.
    fn sigma_form(&self) -> (f64, f64) {
        match self.family {
            TailFamily::LorenzGeometric { beta, .. } => (1.0 / beta, (-(1.0 - beta)).exp()),
            TailFamily::DyadicAffine => (1.0, 0.5),
        }
    }

    /// (c, r) with |domain_i| = c·r^i.
    fn len_form(&self) -> (f64, f64) {
        match self.family {
            TailFamily::LorenzGeometric { .. } => {
                let e1 = (-1.0f64).exp();
                (1.0 - e1, e1)
            }
            TailFamily::DyadicAffine => (1.0, 0.5),
        }
    }

    /// Certified sum_{i >= i_start} sigma_i · e^(rate · tau_sup_i), where tau_sup_i is the
    /// closed-form per-branch supremum of the given return time on the tail domains.
    pub fn weighted_sigma_sum(&self, tau_linear: (f64, f64), rate: f64) -> Result<f64> {
        self.weighted_sigma_sum_from(self.i_start, tau_linear, rate)
    }

    /// Same certified sum but starting at an arbitrary index >= i_start (remainder after
    /// materializing a finite prefix of the tail).
    pub fn weighted_sigma_sum_from(
        &self,
        from: usize,
        tau_linear: (f64, f64),
        rate: f64,
    ) -> Result<f64> {
        let (a, b) = tau_linear;
        let (c, r) = self.sigma_form();
        geometric_tail(
            c * (rate * a).exp(),
            r * (rate * b).exp(),
            from.max(self.i_start),
            "weighted contraction tail",
        )
    }

    /// Construct the concrete branch for tail index i.
    pub fn materialize(&self, i: usize) -> Result<Branch> {
        match self.family {
            TailFamily::LorenzGeometric { beta, .. } => {
                Branch::new(self.domain(i), BranchKind::Power { beta })
            }
            TailFamily::DyadicAffine => Branch::new(
                self.domain(i),
                BranchKind::Affine {
                    slope: 2.0f64.powi(i as i32),
                    intercept: -1.0,
                },
            ),
        }
    }

    /// Certified sup_{i >= i_start} sigma_i^alpha · e^(rate · tau_sup_i).
    /// Returns +inf when the per-branch terms grow without bound.
    pub fn weighted_sigma_sup(&self, alpha: f64, tau_linear: (f64, f64), rate: f64) -> f64 {
        let (a, b) = tau_linear;
        let (c, r) = self.sigma_form();
        let ratio = r.powf(alpha) * (rate * b).exp();
        let first = c.powf(alpha)
            * r.powf(alpha * self.i_start as f64)
            * (rate * (a + b * self.i_start as f64)).exp();
        if ratio <= 1.0 {
            first
        } else {
            f64::INFINITY
        }
    }

    /// Certified sum_{i >= i_start} |domain_i| · e^(rate · tau_sup_i).
    pub fn weighted_len_sum(&self, tau_linear: (f64, f64), rate: f64) -> Result<f64> {
        let (a, b) = tau_linear;
        let (c, r) = self.len_form();
        geometric_tail(
            c * (rate * a).exp(),
            r * (rate * b).exp(),
            self.i_start,
            "return-time tail integral",
        )
    }
}

/// A piecewise monotone interval map: finitely many stored branches over an ambient
/// interval, plus an optional certified tail family.
#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    omega: Interval,
    branches: Vec<Branch>,
    tail: Option<TailDescriptor>,
    /// Branch indices sorted by domain position, for point lookup.
    sorted: Vec<usize>,
}

impl PiecewiseMap {
    pub fn new(
        omega: Interval,
        branches: Vec<Branch>,
        tail: Option<TailDescriptor>,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidParameter("a map needs at least one branch".into()));
        }
        for (i, b) in branches.iter().enumerate() {
            if b.domain.lo < omega.lo - 1e-15 || b.domain.hi > omega.hi + 1e-15 {
                return Err(Error::InvalidParameter(format!(
                    "branch {i} domain ({}, {}) leaves the ambient interval",
                    b.domain.lo, b.domain.hi
                )));
            }
            if b.image.lo < omega.lo - 1e-12 || b.image.hi > omega.hi + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "branch {i} image ({}, {}) leaves the ambient interval",
                    b.image.lo, b.image.hi
                )));
            }
        }
        let mut sorted: Vec<usize> = (0..branches.len()).collect();
        sorted.sort_by(|&a, &b| {
            branches[a]
                .domain
                .lo
                .partial_cmp(&branches[b].domain.lo)
                .unwrap()
        });
        // Domains must be pairwise disjoint (open intervals: touching endpoints are fine).
        for w in sorted.windows(2) {
            let (a, b) = (&branches[w[0]].domain, &branches[w[1]].domain);
            if a.hi > b.lo + 1e-15 {
                return Err(Error::InvalidParameter(format!(
                    "branch domains ({}, {}) and ({}, {}) overlap",
                    a.lo, a.hi, b.lo, b.hi
                )));
            }
        }
        Ok(Self {
            omega,
            branches,
            tail,
            sorted,
        })
    }

    pub fn omega(&self) -> Interval {
        self.omega
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, i: usize) -> Result<&Branch> {
        self.branches
            .get(i)
            .ok_or_else(|| Error::InvalidParameter(format!("branch index {i} out of range")))
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn tail(&self) -> Option<&TailDescriptor> {
        self.tail.as_ref()
    }

    /// Lebesgue mass of the ambient interval not covered by stored branches or the
    /// declared tail. Well-formed maps keep this at roundoff level.
    pub fn coverage_gap(&self) -> f64 {
        let covered: f64 = self.branches.iter().map(|b| b.domain.len()).sum();
        let tail = self.tail.as_ref().map_or(0.0, |t| t.domain_mass());
        (self.omega.len() - covered - tail).abs()
    }

    /// Find the branch whose open domain contains x.
    pub fn locate(&self, x: f64) -> Result<usize> {
        // Binary search over sorted domains.
        let mut lo = 0usize;
        let mut hi = self.sorted.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            let b = &self.branches[self.sorted[mid]];
            if x <= b.domain.lo {
                hi = mid;
            } else if x >= b.domain.hi {
                lo = mid + 1;
            } else {
                return Ok(self.sorted[mid]);
            }
        }
        Err(Error::OutsideDomain { x })
    }

    /// Apply the map: returns (f(x), branch index). Partition endpoints and gaps are
    /// rejected.
    pub fn evaluate(&self, x: f64) -> Result<(f64, usize)> {
        let id = self.locate(x)?;
        Ok((self.branches[id].forward(x), id))
    }

    /// Invert branch `branch_id` at y (y must lie strictly inside the branch image).
    /// The result is residual-checked: |f(x) - y| <= 1e-12 · max(1, |y|).
    pub fn inverse_branch(&self, branch_id: usize, y: f64) -> Result<f64> {
        let b = self.branch(branch_id)?;
        if !b.image.contains(y) {
            return Err(Error::OutsideImage {
                y,
                branch: branch_id,
            });
        }
        let x = b.inverse(y);
        let residual = (b.forward(x) - y).abs();
        if residual > INVERSE_RESIDUAL_TOL * y.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "inverse of branch {branch_id} at y = {y} has residual {residual:.3e}"
            )));
        }
        Ok(x)
    }

    /// Per-branch contraction supremum sigma_i = sup 1/|f'|.
    pub fn branch_contraction(&self, branch_id: usize) -> Result<f64> {
        self.branch(branch_id)?.contraction(branch_id)
    }

    /// Simplified per-branch contraction estimate for the power-law family,
    /// e^(-i(1-beta)) — the true supremum is e^(-i(1-beta))/beta. Exposed so
    /// reports can show both. Returns None for other families.
    pub fn lorenz_contraction_estimate(&self, branch_id: usize) -> Option<f64> {
        match self.branch(branch_id).ok()?.kind() {
            BranchKind::Power { beta } => {
                Some((-(branch_id as f64) * (1.0 - beta)).exp())
            }
            _ => None,
        }
    }

    /// sup over stored branches of 1/|f'|.
    pub fn max_contraction(&self) -> Result<f64> {
        let mut sup = 0.0f64;
        for i in 0..self.branches.len() {
            sup = sup.max(self.branch_contraction(i)?);
        }
        Ok(sup)
    }

    /// Chop branches whose image is longer than 2·eps0·gamma into equal image-length
    /// pieces, each with image length in [eps0·gamma, 2·eps0·gamma]. The underlying
    /// dynamics are unchanged; only the partition is refined. The analytic tail (whose
    /// branch images shrink geometrically) is kept as is.
    pub fn refine_partition(&self, eps0: f64, gamma: f64) -> Result<PiecewiseMap> {
        if !(eps0 > 0.0) {
            return Err(Error::InvalidParameter("eps0 must be positive".into()));
        }
        if !(gamma > 2.0) {
            return Err(Error::InvalidParameter("gamma must exceed 2".into()));
        }
        let cap = 2.0 * eps0 * gamma;
        let mut pieces = Vec::new();
        for b in &self.branches {
            let len = b.image.len();
            if len <= cap {
                pieces.push(b.clone());
                continue;
            }
            let m = (len / cap).ceil() as usize;
            // Image cut points, mapped back to domain cut points through the inverse.
            let mut xs = Vec::with_capacity(m + 1);
            for t in 0..=m {
                let y = b.image.lo + len * t as f64 / m as f64;
                let x = if t == 0 {
                    if b.increasing { b.domain.lo } else { b.domain.hi }
                } else if t == m {
                    if b.increasing { b.domain.hi } else { b.domain.lo }
                } else {
                    b.inverse(y)
                };
                xs.push(x);
            }
            if !b.increasing {
                xs.reverse();
            }
            for w in xs.windows(2) {
                pieces.push(Branch::new(Interval::new(w[0], w[1])?, b.kind.clone())?);
            }
        }
        PiecewiseMap::new(self.omega, pieces, self.tail.clone())
    }
}

/// The full-image doubling map on (0,1): x -> 2x mod 1 over two affine branches.
pub fn make_doubling() -> PiecewiseMap {
    let omega = Interval { lo: 0.0, hi: 1.0 };
    let b0 = Branch::new(
        Interval { lo: 0.0, hi: 0.5 },
        BranchKind::Affine {
            slope: 2.0,
            intercept: 0.0,
        },
    )
    .expect("static branch");
    let b1 = Branch::new(
        Interval { lo: 0.5, hi: 1.0 },
        BranchKind::Affine {
            slope: 2.0,
            intercept: -1.0,
        },
    )
    .expect("static branch");
    PiecewiseMap::new(omega, vec![b0, b1], None).expect("static map")
}

/// The slope-±2 tent map on (0,1): 2x on (0,½), 2-2x on (½,1).
pub fn make_tent() -> PiecewiseMap {
    let omega = Interval { lo: 0.0, hi: 1.0 };
    let b0 = Branch::new(
        Interval { lo: 0.0, hi: 0.5 },
        BranchKind::Affine {
            slope: 2.0,
            intercept: 0.0,
        },
    )
    .expect("static branch");
    let b1 = Branch::new(
        Interval { lo: 0.5, hi: 1.0 },
        BranchKind::Affine {
            slope: -2.0,
            intercept: 2.0,
        },
    )
    .expect("static branch");
    PiecewiseMap::new(omega, vec![b0, b1], None).expect("static map")
}

/// Dyadic full-branch family: branch i (i = 1..=i_max) maps (2^-i, 2^-(i-1)) affinely
/// onto (0,1) with slope 2^i; branches beyond i_max are carried by a certified dyadic
/// tail. Lebesgue measure is invariant.
pub fn make_lueroth(i_max: usize) -> Result<PiecewiseMap> {
    if i_max < 1 {
        return Err(Error::InvalidParameter("i_max must be at least 1".into()));
    }
    if i_max > 1000 {
        return Err(Error::InvalidParameter(
            "i_max beyond 1000 underflows the dyadic domains".into(),
        ));
    }
    let omega = Interval { lo: 0.0, hi: 1.0 };
    let mut branches = Vec::with_capacity(i_max);
    for i in 1..=i_max {
        let lo = 0.5f64.powi(i as i32);
        let hi = 0.5f64.powi(i as i32 - 1);
        branches.push(Branch::new(
            Interval { lo, hi },
            BranchKind::Affine {
                slope: 2.0f64.powi(i as i32),
                intercept: -1.0,
            },
        )?);
    }
    let tail = TailDescriptor {
        family: TailFamily::DyadicAffine,
        i_start: i_max + 1,
        // sum_{i > i_max} 2^-i = 2^-i_max
        tail_sum_bound: 0.5f64.powi(i_max as i32),
    };
    PiecewiseMap::new(omega, branches, Some(tail))
}

/// Power-law family on (0,1): branch i (i = 0..i_max-1) is f(x) = x^beta restricted to
/// (e^-(i+1), e^-i); branches i >= i_max are carried by a certified geometric tail.
///
/// `lambda` does not enter the map itself (it scales the companion logarithmic return
/// time) but is recorded in the tail descriptor so tail bounds involving the return time
/// stay closed-form.
pub fn make_lorenz_map(lambda: f64, beta: f64, i_max: usize) -> Result<PiecewiseMap> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta = {beta} must lie in (0, 1)"
        )));
    }
    if i_max < 1 {
        return Err(Error::InvalidParameter("i_max must be at least 1".into()));
    }
    let omega = Interval { lo: 0.0, hi: 1.0 };
    let mut branches = Vec::with_capacity(i_max);
    for i in 0..i_max {
        let lo = (-(i as f64 + 1.0)).exp();
        let hi = (-(i as f64)).exp();
        branches.push(Branch::new(
            Interval { lo, hi },
            BranchKind::Power { beta },
        )?);
    }
    let tail = TailDescriptor {
        family: TailFamily::LorenzGeometric { lambda, beta },
        i_start: i_max,
        // sum_{i >= i_max} e^(-i(1-beta))/beta, geometric with ratio e^-(1-beta)
        tail_sum_bound: (-(i_max as f64) * (1.0 - beta)).exp()
            / (beta * (1.0 - (-(1.0 - beta)).exp())),
    };
    PiecewiseMap::new(omega, branches, Some(tail))
}

/// Explicit affine branch description (for configs and tests).
#[derive(Clone, Copy, Debug)]
pub struct AffineBranchSpec {
    pub domain: Interval,
    pub slope: f64,
    pub intercept: f64,
}

/// Build a map from explicit affine branches.
pub fn make_explicit(omega: Interval, specs: &[AffineBranchSpec]) -> Result<PiecewiseMap> {
    let branches = specs
        .iter()
        .map(|s| {
            Branch::new(
                s.domain,
                BranchKind::Affine {
                    slope: s.slope,
                    intercept: s.intercept,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseMap::new(omega, branches, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_evaluates_interior_points() {
        let map = make_doubling();
        let (y, id) = map.evaluate(0.3).unwrap();
        assert_abs_diff_eq!(y, 0.6, epsilon = 1e-15);
        assert_eq!(id, 0);
        let (y, id) = map.evaluate(0.75).unwrap();
        assert_abs_diff_eq!(y, 0.5, epsilon = 1e-15);
        assert_eq!(id, 1);
    }

    #[test]
    fn partition_endpoint_is_rejected() {
        let map = make_doubling();
        assert!(matches!(
            map.evaluate(0.5),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(matches!(
            map.evaluate(0.0),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(matches!(
            map.evaluate(1.5),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn power_family_evaluates_by_closed_form() {
        let map = make_lorenz_map(1.0, 0.5, 10).unwrap();
        // 0.25 lies in (e^-2, e^-1)? e^-2 = 0.135, e^-1 = 0.368 — yes, branch 1.
        let (y, id) = map.evaluate(0.25).unwrap();
        assert_abs_diff_eq!(y, 0.5, epsilon = 1e-15);
        assert_eq!(id, 1);
    }

    #[test]
    fn inverse_branch_round_trips() {
        let map = make_doubling();
        let x = map.inverse_branch(1, 0.6).unwrap();
        assert_abs_diff_eq!(x, 0.8, epsilon = 1e-15);

        let lorenz = make_lorenz_map(1.0, 0.5, 10).unwrap();
        let x = lorenz.inverse_branch(1, 0.5).unwrap();
        assert_abs_diff_eq!(x, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn inverse_rejects_values_outside_image() {
        // A slope-3 branch with image (0,1): y = 1.2 must fail.
        let omega = Interval { lo: 0.0, hi: 1.0 };
        let map = make_explicit(
            omega,
            &[AffineBranchSpec {
                domain: Interval {
                    lo: 0.0,
                    hi: 1.0 / 3.0,
                },
                slope: 3.0,
                intercept: 0.0,
            }],
        )
        .unwrap();
        assert!(matches!(
            map.inverse_branch(0, 1.2),
            Err(Error::OutsideImage { .. })
        ));
        // Image endpoints are excluded too.
        assert!(matches!(
            map.inverse_branch(0, 1.0),
            Err(Error::OutsideImage { .. })
        ));
    }

    #[test]
    fn contraction_closed_forms() {
        let map = make_doubling();
        assert_abs_diff_eq!(map.branch_contraction(0).unwrap(), 0.5, epsilon = 0.0);

        // Slope-3 piece.
        let omega = Interval { lo: 0.0, hi: 1.0 };
        let m3 = make_explicit(
            omega,
            &[AffineBranchSpec {
                domain: Interval {
                    lo: 0.0,
                    hi: 1.0 / 3.0,
                },
                slope: 3.0,
                intercept: 0.0,
            }],
        )
        .unwrap();
        assert_abs_diff_eq!(m3.branch_contraction(0).unwrap(), 1.0 / 3.0, epsilon = 1e-16);

        // Power family: true sup is e^(-i(1-beta))/beta, the simplified estimate drops 1/beta.
        let lorenz = make_lorenz_map(1.0, 0.5, 10).unwrap();
        for i in 0..10 {
            let truth = lorenz.branch_contraction(i).unwrap();
            let expect = (-(i as f64) * 0.5).exp() * 2.0;
            assert_abs_diff_eq!(truth, expect, epsilon = 1e-13 * expect);
            let estimate = lorenz.lorenz_contraction_estimate(i).unwrap();
            assert_abs_diff_eq!(estimate, (-(i as f64) * 0.5).exp(), epsilon = 1e-15);
            assert!(truth > estimate, "true supremum strictly dominates the estimate");
        }
    }

    #[test]
    fn custom_branch_contraction_matches_grid_refinement() {
        // Same power branch expressed through closures; grid max should land close to
        // the closed form hi^(1-beta)/beta.
        let beta = 0.5f64;
        let domain = Interval {
            lo: (-2.0f64).exp(),
            hi: (-1.0f64).exp(),
        };
        let b = Branch::new(
            domain,
            BranchKind::Custom {
                forward: Arc::new(move |x| x.powf(beta)),
                derivative: Arc::new(move |x| beta * x.powf(beta - 1.0)),
                inverse: Arc::new(move |y| y.powf(1.0 / beta)),
            },
        )
        .unwrap();
        let got = b.contraction(0).unwrap();
        let expect = domain.hi.powf(1.0 - beta) / beta;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-6);
        assert!(got <= expect + 1e-12, "grid max never exceeds the true sup");
    }

    #[test]
    fn vanishing_derivative_is_flagged() {
        let b = Branch::new(
            Interval { lo: 0.0, hi: 1.0 },
            BranchKind::Custom {
                forward: Arc::new(|x| x * x),
                derivative: Arc::new(|x| 2.0 * x),
                inverse: Arc::new(|y| y.sqrt()),
            },
        )
        .unwrap();
        assert!(matches!(
            b.contraction(0),
            Err(Error::NonExpandingBranch { branch: 0 })
        ));
    }

    #[test]
    fn lorenz_map_structure_and_tail_bound() {
        let map = make_lorenz_map(1.0, 0.5, 10).unwrap();
        assert_eq!(map.n_branches(), 10);
        let b3 = map.branch(3).unwrap();
        assert_abs_diff_eq!(b3.domain.lo, (-4.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(b3.domain.hi, (-3.0f64).exp(), epsilon = 1e-16);

        // Independent evaluation of the geometric sum sum_{i>=10} 2 e^(-i/2):
        // 2 e^-5 / (1 - e^-1/2), ratio e^-1/2.
        let expect = 2.0 * (-5.0f64).exp() / (1.0 - (-0.5f64).exp());
        let tail = map.tail().unwrap();
        assert_abs_diff_eq!(tail.tail_sum_bound, expect, epsilon = 1e-15);
        // Brute-force partial sums converge to the same value from below.
        let mut partial = 0.0;
        for i in 10..400 {
            partial += 2.0 * (-(i as f64) * 0.5).exp();
        }
        assert_abs_diff_eq!(tail.tail_sum_bound, partial, epsilon = 1e-12);

        // Coverage: branches + tail exhaust (0,1).
        assert!(map.coverage_gap() < 1e-12);
    }

    #[test]
    fn lorenz_map_rejects_bad_exponent() {
        assert!(matches!(
            make_lorenz_map(1.0, 1.2, 10),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            make_lorenz_map(0.0, 0.5, 10),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn lueroth_structure() {
        let map = make_lueroth(40).unwrap();
        assert_eq!(map.n_branches(), 40);
        // Branch i=1 occupies (1/2, 1) and maps onto (0,1).
        let b = map.branch(0).unwrap();
        assert_abs_diff_eq!(b.domain.lo, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(b.image.lo, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.image.hi, 1.0, epsilon = 1e-15);
        assert!(map.coverage_gap() < 1e-12);
        assert_abs_diff_eq!(
            map.tail().unwrap().tail_sum_bound,
            0.5f64.powi(40),
            epsilon = 1e-27
        );
    }

    #[test]
    fn refine_keeps_small_images_untouched() {
        let map = make_doubling();
        // eps0·gamma = 1 => cap 2; |f omega_i| = 1 <= 2: unchanged.
        let refined = map.refine_partition(0.25, 4.0).unwrap();
        assert_eq!(refined.n_branches(), 2);
    }

    #[test]
    fn refine_chops_to_bounded_image_pieces() {
        let map = make_doubling();
        // eps0·gamma = 0.25 => cap 0.5: each unit-length image splits in two pieces of 0.5.
        let refined = map.refine_partition(0.0625, 4.0).unwrap();
        assert_eq!(refined.n_branches(), 4);
        for b in refined.branches() {
            let len = b.image.len();
            assert!(
                (0.25..=0.5 + 1e-15).contains(&len),
                "piece image length {len} outside [eps0*gamma, 2*eps0*gamma]"
            );
        }
    }

    #[test]
    fn refine_preserves_the_dynamics() {
        let map = make_lorenz_map(1.0, 0.5, 8).unwrap();
        let refined = map.refine_partition(0.01, 8.0).unwrap();
        assert!(refined.n_branches() > map.n_branches());
        let mut x = 0.7841;
        for k in 0..1000 {
            let step = x * 0.99991 + 1e-7 * ((k * 2654435761_usize % 1000) as f64) * 1e-3;
            let x_probe = step.clamp(1e-8, 1.0 - 1e-8);
            match (map.evaluate(x_probe), refined.evaluate(x_probe)) {
                (Ok((a, _)), Ok((b, _))) => {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-13);
                }
                (Err(_), _) | (_, Err(_)) => {} // endpoint hits are allowed to differ
            }
            x = 0.37 + 0.6 * (x * 7.3).fract();
        }
    }

    #[test]
    fn refine_handles_decreasing_branches() {
        let map = make_tent();
        let refined = map.refine_partition(0.0625, 4.0).unwrap();
        assert_eq!(refined.n_branches(), 4);
        // Dynamics preserved on the decreasing side.
        for &x in &[0.51, 0.63, 0.77, 0.92] {
            let (a, _) = map.evaluate(x).unwrap();
            let (b, _) = refined.evaluate(x).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        // Pieces stay disjoint and sorted.
        assert!(refined.coverage_gap() < 1e-12);
    }

    #[test]
    fn weighted_tail_sums_match_brute_force() {
        let map = make_lorenz_map(1.0, 0.5, 10).unwrap();
        let tail = map.tail().unwrap();
        // tau_sup_i = (i+1)/lambda: linear form a = 1, b = 1 (lambda = 1).
        let rate = 0.15;
        let got = tail.weighted_sigma_sum((1.0, 1.0), rate).unwrap();
        let mut brute = 0.0;
        for i in 10..2000 {
            brute += 2.0 * (-(i as f64) * 0.5).exp() * (rate * (i as f64 + 1.0)).exp();
        }
        assert_abs_diff_eq!(got, brute, epsilon = 1e-10);

        let sup = tail.weighted_sigma_sup(1.0 / 3.0, (1.0, 1.0), rate);
        let mut brute_sup = 0.0f64;
        for i in 10..2000 {
            let term =
                (2.0 * (-(i as f64) * 0.5).exp()).powf(1.0 / 3.0) * (rate * (i as f64 + 1.0)).exp();
            brute_sup = brute_sup.max(term);
        }
        assert_abs_diff_eq!(sup, brute_sup, epsilon = 1e-12);
    }

    #[test]
    fn divergent_tail_sum_is_an_error() {
        let map = make_lorenz_map(1.0, 0.5, 10).unwrap();
        let tail = map.tail().unwrap();
        // rate 1.0 with tau linear slope 1: ratio e^{-1/2} * e^{1} > 1 => divergent.
        assert!(matches!(
            tail.weighted_sigma_sum((1.0, 1.0), 1.0),
            Err(Error::DivergentTails(_))
        ));
    }
}
