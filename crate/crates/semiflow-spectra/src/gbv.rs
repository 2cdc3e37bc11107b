//! Grid functions and the oscillation-based variation seminorm.
//!
//! The seminorm of a grid function h is sup over a dyadic ladder of radii
//! eps = eps0·2^-k of eps^-alpha · ∫ osc(h; B_eps(x) ∩ Ω) dx, where osc over a set is
//! the diameter of the sampled values on cells meeting the set. The x-integral is
//! computed exactly by a breakpoint sweep: as x grows, the set of cells meeting the
//! closed ball [x−eps, x+eps] changes only at cell-boundary ± eps events, so the
//! integrand is piecewise constant and the integral is a finite sum of
//! oscillation × segment-length terms. (A midpoint rule here has a measurable one-sided
//! bias; the sweep has none.)

use crate::error::{Error, Result};
use crate::maps::Interval;
use crate::quad::pairwise_sum;
use num_complex::Complex64;
use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::Path;

/// A complex-valued function sampled at the midpoints of a uniform grid over an
/// interval. The represented function is piecewise constant on cells.
#[derive(Clone, Debug)]
pub struct GridFunction {
    omega: Interval,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn from_values(omega: Interval, values: Vec<Complex64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "grid functions need at least 2 cells".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "grid function contains a non-finite value {bad}"
            )));
        }
        Ok(Self { omega, values })
    }

    pub fn from_real_fn<F: Fn(f64) -> f64>(omega: Interval, n: usize, f: F) -> Result<Self> {
        let w = omega.len() / n as f64;
        let values = (0..n)
            .map(|k| Complex64::new(f(omega.lo + (k as f64 + 0.5) * w), 0.0))
            .collect();
        Self::from_values(omega, values)
    }

    pub fn from_complex_fn<F: Fn(f64) -> Complex64>(
        omega: Interval,
        n: usize,
        f: F,
    ) -> Result<Self> {
        let w = omega.len() / n as f64;
        let values = (0..n)
            .map(|k| f(omega.lo + (k as f64 + 0.5) * w))
            .collect();
        Self::from_values(omega, values)
    }

    pub fn constant(omega: Interval, n: usize, value: Complex64) -> Result<Self> {
        Self::from_values(omega, vec![value; n])
    }

    pub fn omega(&self) -> Interval {
        self.omega
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        self.omega.len() / self.values.len() as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.omega.lo + (k as f64 + 0.5) * self.cell_width()
    }

    /// The open cell (lo + k·w, lo + (k+1)·w).
    pub fn cell(&self, k: usize) -> Interval {
        let w = self.cell_width();
        Interval {
            lo: self.omega.lo + k as f64 * w,
            hi: self.omega.lo + (k as f64 + 1.0) * w,
        }
    }

    /// Index of the cell containing x (boundary points resolve to the right cell,
    /// clamped into range).
    pub fn cell_index(&self, x: f64) -> usize {
        let raw = ((x - self.omega.lo) / self.cell_width()).floor();
        (raw.max(0.0) as usize).min(self.values.len() - 1)
    }

    /// Piecewise-constant evaluation: the stored value of the cell containing x.
    pub fn value_at(&self, x: f64) -> Complex64 {
        self.values[self.cell_index(x)]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Pointwise sum; grids must be compatible.
    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.n() != other.n() || self.omega != other.omega {
            return Err(Error::InvalidParameter(
                "grid function shapes do not match".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        GridFunction::from_values(self.omega, values)
    }

    /// L¹ norm, exact for the represented piecewise-constant function.
    pub fn l1_norm(&self) -> f64 {
        let w = self.cell_width();
        let terms: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        w * pairwise_sum(&terms)
    }

    /// Grid sup norm (max modulus over cells).
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// ∫_Ω h dx, exact for the represented function.
    pub fn integral(&self) -> Complex64 {
        let w = self.cell_width();
        let re: Vec<f64> = self.values.iter().map(|v| v.re).collect();
        let im: Vec<f64> = self.values.iter().map(|v| v.im).collect();
        Complex64::new(w * pairwise_sum(&re), w * pairwise_sum(&im))
    }

    /// Write as CSV with columns cell_index, midpoint, re, im.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "cell_index,midpoint,re,im")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{},{}", k, self.midpoint(k), v.re, v.im)?;
        }
        Ok(())
    }

    /// Read back a CSV produced by `write_csv`; the grid geometry is reconstructed from
    /// the midpoint column.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut midpoints = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "cell_index,midpoint,re,im" {
                    return Err(Error::Config(format!(
                        "unexpected grid CSV header: {line}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "grid CSV line {} has {} fields, expected 4",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("grid CSV line {}: {e}", lineno + 1)))
            };
            midpoints.push(parse(fields[1])?);
            values.push(Complex64::new(parse(fields[2])?, parse(fields[3])?));
        }
        if values.len() < 2 {
            return Err(Error::Config("grid CSV holds fewer than 2 cells".into()));
        }
        let n = values.len();
        let w = (midpoints[n - 1] - midpoints[0]) / (n - 1) as f64;
        let omega = Interval::new(midpoints[0] - 0.5 * w, midpoints[n - 1] + 0.5 * w)?;
        GridFunction::from_values(omega, values)
    }
}

/// Parameters of the variation seminorm: Hölder exponent and the largest ball radius.
#[derive(Clone, Copy, Debug)]
pub struct GbvParams {
    pub alpha: f64,
    pub eps0: f64,
}

impl GbvParams {
    pub fn new(alpha: f64, eps0: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha} must lie in (0, 1)"
            )));
        }
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eps0 = {eps0} must be positive and finite"
            )));
        }
        Ok(Self { alpha, eps0 })
    }
}

/// Diameter of a point set in the complex plane. Small sets are done pairwise; larger
/// ones through a convex hull first.
fn complex_diameter(points: &[Complex64]) -> f64 {
    match points.len() {
        0 | 1 => 0.0,
        2 => (points[0] - points[1]).norm(),
        m if m <= 48 => {
            let mut best = 0.0f64;
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    best = best.max((points[i] - points[j]).norm_sqr());
                }
            }
            best.sqrt()
        }
        _ => {
            let hull = convex_hull(points);
            let mut best = 0.0f64;
            for i in 0..hull.len() {
                for j in (i + 1)..hull.len() {
                    best = best.max((hull[i] - hull[j]).norm_sqr());
                }
            }
            best.sqrt()
        }
    }
}

/// Andrew's monotone-chain convex hull over the values viewed as plane points.
fn convex_hull(points: &[Complex64]) -> Vec<Complex64> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|z| (z.re, z.im)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts.iter().map(|&(x, y)| Complex64::new(x, y)).collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull.iter().map(|&(x, y)| Complex64::new(x, y)).collect()
}

/// Sliding-window running max and min over real values, for windows whose two ends only
/// move rightward.
struct SlidingExtrema<'a> {
    vals: &'a [f64],
    maxq: VecDeque<usize>,
    minq: VecDeque<usize>,
}

impl<'a> SlidingExtrema<'a> {
    fn new(vals: &'a [f64]) -> Self {
        Self {
            vals,
            maxq: VecDeque::new(),
            minq: VecDeque::new(),
        }
    }

    fn push(&mut self, j: usize) {
        while let Some(&b) = self.maxq.back() {
            if self.vals[b] <= self.vals[j] {
                self.maxq.pop_back();
            } else {
                break;
            }
        }
        self.maxq.push_back(j);
        while let Some(&b) = self.minq.back() {
            if self.vals[b] >= self.vals[j] {
                self.minq.pop_back();
            } else {
                break;
            }
        }
        self.minq.push_back(j);
    }

    fn evict_below(&mut self, jlo: usize) {
        while self.maxq.front().is_some_and(|&f| f < jlo) {
            self.maxq.pop_front();
        }
        while self.minq.front().is_some_and(|&f| f < jlo) {
            self.minq.pop_front();
        }
    }

    fn osc(&self) -> f64 {
        match (self.maxq.front(), self.minq.front()) {
            (Some(&a), Some(&b)) => self.vals[a] - self.vals[b],
            _ => 0.0,
        }
    }
}

/// Oscillation of h over the cells positively intersecting the closed interval s:
/// the diameter of the sampled values over those cells.
pub fn osc(h: &GridFunction, s: Interval) -> f64 {
    let w = h.cell_width();
    let lo = h.omega().lo;
    let n = h.n();
    // Cells j with cell.lo < s.hi and cell.hi > s.lo.
    let first = (((s.lo - lo) / w).floor().max(0.0)) as usize;
    if s.hi <= lo || s.lo >= h.omega().hi {
        return 0.0;
    }
    let mut jmin = first.min(n - 1);
    // Nudge leftward if the floor landed one too far right (boundary ties).
    while jmin > 0 && lo + (jmin as f64) * w > s.lo {
        jmin -= 1;
    }
    while lo + (jmin as f64 + 1.0) * w <= s.lo && jmin + 1 < n {
        jmin += 1;
    }
    let mut jmax = jmin;
    while jmax + 1 < n && lo + (jmax as f64 + 1.0) * w < s.hi {
        jmax += 1;
    }
    complex_diameter(&h.values()[jmin..=jmax])
}

/// One radius of the dyadic ladder with its exact oscillation integral.
#[derive(Clone, Copy, Debug)]
pub struct LadderRung {
    pub eps: f64,
    pub osc_integral: f64,
    /// eps^-alpha · osc_integral
    pub scaled: f64,
}

/// Exact ∫_Ω osc(h; B_eps(x) ∩ Ω) dx by breakpoint sweep.
pub fn osc_integral(h: &GridFunction, eps: f64) -> f64 {
    let n = h.n();
    let w = h.cell_width();
    let lo = h.omega().lo;
    let hi = h.omega().hi;
    let vals = h.values();

    let real_vals: Option<Vec<f64>> = if h.is_real() {
        Some(vals.iter().map(|v| v.re).collect())
    } else {
        None
    };
    let mut extrema = real_vals.as_ref().map(|rv| SlidingExtrema::new(rv));

    // Initial window at x = lo⁺: cells with cell.lo − eps ≤ lo, i.e. j·w ≤ eps.
    let mut jhi = ((eps / w).floor() as usize).min(n - 1);
    let mut jlo = 0usize;
    if let Some(e) = extrema.as_mut() {
        for j in 0..=jhi {
            e.push(j);
        }
    }

    let mut segments: Vec<f64> = Vec::with_capacity(2 * n + 4);
    let mut cur = lo;
    loop {
        let enter = if jhi + 1 < n {
            lo + (jhi as f64 + 1.0) * w - eps
        } else {
            f64::INFINITY
        };
        let leave = if jlo < jhi {
            lo + (jlo as f64 + 1.0) * w + eps
        } else {
            // Never let the window go empty; the next cell always enters first anyway.
            f64::INFINITY
        };
        let next = enter.min(leave).min(hi);
        if next > cur {
            let o = match extrema.as_ref() {
                Some(e) => e.osc(),
                None => complex_diameter(&vals[jlo..=jhi]),
            };
            if o > 0.0 {
                segments.push(o * (next - cur));
            }
            cur = next;
        }
        if cur >= hi {
            break;
        }
        let mut advanced = false;
        if enter <= cur && jhi + 1 < n {
            jhi += 1;
            if let Some(e) = extrema.as_mut() {
                e.push(jhi);
            }
            advanced = true;
        }
        if leave <= cur && jlo < jhi {
            jlo += 1;
            if let Some(e) = extrema.as_mut() {
                e.evict_below(jlo);
            }
            advanced = true;
        }
        if !advanced {
            // No event strictly ahead and none applicable: numerical dead end (cannot
            // occur for eps > 0); bail out rather than spin.
            debug_assert!(false, "oscillation sweep stalled at x = {cur}");
            break;
        }
    }
    pairwise_sum(&segments)
}

/// Check that eps0 fits the domain (below half its length) and the grid resolves it
/// (at least 4 cells per window). Returns the cell width.
pub fn validate_resolution(omega: Interval, n: usize, eps0: f64) -> Result<f64> {
    let w = omega.len() / n as f64;
    if !(eps0 < omega.len() / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "eps0 = {eps0} must be below half the domain length {}",
            omega.len()
        )));
    }
    if eps0 < 4.0 * w {
        return Err(Error::Resolution(format!(
            "eps0 = {eps0} spans fewer than 4 cells of width {w}; refine the grid"
        )));
    }
    Ok(w)
}

/// The dyadic ladder eps = eps0·2^-k for k = 0..=K, K = floor(log2(eps0 / (2w))), with
/// the exact oscillation integral and its scaled value at every rung.
pub fn osc_ladder(h: &GridFunction, p: &GbvParams) -> Result<Vec<LadderRung>> {
    let w = validate_resolution(h.omega(), h.n(), p.eps0)?;
    let k_max = (p.eps0 / (2.0 * w)).log2().floor() as i32;
    let rungs: Vec<LadderRung> = (0..=k_max)
        .map(|k| {
            let eps = p.eps0 * 0.5f64.powi(k);
            let integral = osc_integral(h, eps);
            LadderRung {
                eps,
                osc_integral: integral,
                scaled: eps.powf(-p.alpha) * integral,
            }
        })
        .collect();
    Ok(rungs)
}

/// The variation seminorm: sup over the dyadic ladder of eps^-alpha ∫ osc dx.
pub fn seminorm(h: &GridFunction, p: &GbvParams) -> Result<f64> {
    Ok(osc_ladder(h, p)?
        .iter()
        .map(|r| r.scaled)
        .fold(0.0, f64::max))
}

/// Full norm: seminorm + L¹.
pub fn gbv_norm(h: &GridFunction, p: &GbvParams) -> Result<f64> {
    Ok(seminorm(h, p)? + h.l1_norm())
}
