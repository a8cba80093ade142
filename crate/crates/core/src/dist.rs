//! Distribution representations on [0, 1], sampling, and the Kolmogorov,
//! Lévy and Wasserstein-1 distances.
//!
//! All CDFs are breakpoint lists. `eval(x)` is 0 for `x` below the first
//! breakpoint, so an atom at the first breakpoint is expressed by its value
//! there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform_open0, Stream};

/// Tolerance used when checking that a CDF ends at 1 or a density integrates to 1.
pub const MASS_TOL: f64 = 1e-9;

/// Default absolute tolerance of the Lévy bisection.
pub const LEVY_TOL: f64 = 1e-6;

/// Interpolation rule between breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Right-continuous staircase.
    #[serde(rename = "step")]
    Step,
    /// Linear between breakpoints; used for ground-truth models.
    #[serde(rename = "linear")]
    Linear,
}

/// Anything that can be evaluated as a CDF and inverted.
pub trait Distribution1D: Send + Sync {
    fn cdf(&self, x: f64) -> f64;

    /// Generalized inverse `inf{x : F(x) >= q}` for `q` in (0, 1].
    fn quantile(&self, q: f64) -> f64;

    /// Inverse-transform draw.
    fn sample(&self, rng: &mut Stream) -> f64 {
        self.quantile(uniform_open0(rng))
    }
}

/// Monotone piecewise CDF on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCdf")]
pub struct PiecewiseCdf {
    interpolation: Interpolation,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    is_full_cdf: bool,
}

#[derive(Deserialize)]
struct RawCdf {
    interpolation: Interpolation,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    #[serde(default = "full_by_default")]
    is_full_cdf: bool,
}

fn full_by_default() -> bool {
    true
}

impl TryFrom<RawCdf> for PiecewiseCdf {
    type Error = Error;

    fn try_from(raw: RawCdf) -> Result<Self> {
        PiecewiseCdf::new(raw.breakpoints, raw.values, raw.interpolation, raw.is_full_cdf)
    }
}

impl PiecewiseCdf {
    pub fn new(
        breakpoints: Vec<f64>,
        mut values: Vec<f64>,
        interpolation: Interpolation,
        is_full_cdf: bool,
    ) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::Validation("a CDF needs at least one breakpoint".into()));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} breakpoints but {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        for (j, &b) in breakpoints.iter().enumerate() {
            if !b.is_finite() || !(0.0..=1.0).contains(&b) {
                return Err(Error::Validation(format!("breakpoint {j} = {b} outside [0,1]")));
            }
            if j > 0 && b <= breakpoints[j - 1] {
                return Err(Error::Validation(format!(
                    "breakpoints not strictly ascending at index {j}"
                )));
            }
        }
        for (j, &v) in values.iter().enumerate() {
            if !(0.0..=1.0 + 1e-12).contains(&v) {
                return Err(Error::Validation(format!("value {j} = {v} outside [0,1]")));
            }
            if j > 0 && v < values[j - 1] {
                return Err(Error::Validation(format!("values decrease at index {j}")));
            }
        }
        for v in values.iter_mut() {
            *v = v.min(1.0);
        }
        let last = values.len() - 1;
        if is_full_cdf {
            if (values[last] - 1.0).abs() > MASS_TOL {
                return Err(Error::Validation(format!(
                    "full CDF must end at 1, ends at {}",
                    values[last]
                )));
            }
            values[last] = 1.0;
        }
        Ok(Self { interpolation, breakpoints, values, is_full_cdf })
    }

    /// Staircase; flagged full when the last value is 1.
    pub fn step(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let full = values.last().is_some_and(|v| (v - 1.0).abs() <= MASS_TOL);
        Self::new(breakpoints, values, Interpolation::Step, full)
    }

    /// Linear interpolant; flagged full when the last value is 1.
    pub fn linear(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let full = values.last().is_some_and(|v| (v - 1.0).abs() <= MASS_TOL);
        Self::new(breakpoints, values, Interpolation::Linear, full)
    }

    pub fn uniform() -> Self {
        Self::linear(vec![0.0, 1.0], vec![0.0, 1.0]).expect("uniform CDF is valid")
    }

    pub fn point_mass(at: f64) -> Result<Self> {
        Self::step(vec![at], vec![1.0])
    }

    /// Linear interpolant of a nondecreasing function sampled on `cells + 1`
    /// equispaced points (plus any `extra` points). Values are clamped to
    /// [0, 1] and made monotone by a running maximum.
    pub fn from_fn(f: impl Fn(f64) -> f64, cells: usize, extra: &[f64]) -> Result<Self> {
        let cells = cells.max(1);
        let mut xs: Vec<f64> = (0..=cells).map(|j| j as f64 / cells as f64).collect();
        xs.extend(extra.iter().copied().filter(|x| (0.0..=1.0).contains(x)));
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut run = 0.0f64;
        let vals: Vec<f64> = xs
            .iter()
            .map(|&x| {
                run = run.max(f(x).clamp(0.0, 1.0));
                run
            })
            .collect();
        Self::linear(xs, vals)
    }

    /// Empirical CDF of `samples` (all in [0, 1]).
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical CDF of an empty sample".into()));
        }
        let (bps, vals) = staircase_counts(samples, samples.len())?;
        Self::new(bps, vals, Interpolation::Step, true)
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_full_cdf(&self) -> bool {
        self.is_full_cdf
    }

    /// Value at and after the last breakpoint.
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    /// F(x); right-continuous, 0 below the first breakpoint.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= x);
        self.value_in_cell(idx, x)
    }

    /// Left limit F(x-).
    pub fn eval_left(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b < x);
        self.value_in_cell(idx, x)
    }

    fn value_in_cell(&self, idx: usize, x: f64) -> f64 {
        if idx == 0 {
            return 0.0;
        }
        let n = self.breakpoints.len();
        match self.interpolation {
            Interpolation::Step => self.values[idx - 1],
            Interpolation::Linear => {
                if idx == n {
                    return self.values[n - 1];
                }
                let (b0, b1) = (self.breakpoints[idx - 1], self.breakpoints[idx]);
                let (v0, v1) = (self.values[idx - 1], self.values[idx]);
                let t = ((x - b0) / (b1 - b0)).clamp(0.0, 1.0);
                v0 + t * (v1 - v0)
            }
        }
    }

    /// `inf{x : F(x) >= q}`. Levels at or below 0 map to the support start 0.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!("quantile level {q} outside [0,1]")));
        }
        if q > self.terminal() {
            return Err(Error::Domain(format!(
                "quantile level {q} above terminal value {}",
                self.terminal()
            )));
        }
        Ok(self.inverse_unchecked(q))
    }

    fn inverse_unchecked(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        let n = self.values.len();
        let idx = self.values.partition_point(|&v| v < q).min(n - 1);
        match self.interpolation {
            Interpolation::Step => self.breakpoints[idx],
            Interpolation::Linear => {
                if idx == 0 {
                    return self.breakpoints[0];
                }
                let (b0, b1) = (self.breakpoints[idx - 1], self.breakpoints[idx]);
                let (v0, v1) = (self.values[idx - 1], self.values[idx]);
                (b0 + (q - v0) / (v1 - v0) * (b1 - b0)).clamp(b0, b1)
            }
        }
    }

    /// Same function on [p, 1], identically 0 below `p`.
    pub fn zero_below(&self, p: f64) -> Result<Self> {
        let p = p.clamp(0.0, 1.0);
        let mut bps = vec![p];
        let mut vals = vec![self.eval(p)];
        for (&b, &v) in self.breakpoints.iter().zip(&self.values) {
            if b > p {
                bps.push(b);
                vals.push(v);
            }
        }
        Self::new(bps, vals, self.interpolation, self.is_full_cdf)
    }

    /// Lower staircase of this CDF on `cells` equal cells plus its own breakpoints.
    pub fn to_step(&self, cells: usize) -> Result<Self> {
        if self.interpolation == Interpolation::Step {
            return Ok(self.clone());
        }
        let cells = cells.max(1);
        let mut xs: Vec<f64> = (0..=cells).map(|j| j as f64 / cells as f64).collect();
        xs.extend_from_slice(&self.breakpoints);
        xs.retain(|&x| x >= self.breakpoints[0]);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let vals = xs.iter().map(|&x| self.eval(x)).collect();
        Self::new(xs, vals, Interpolation::Step, self.is_full_cdf)
    }

    /// Pointwise product of staircases (the CDF of the maximum of independent draws).
    pub fn product(factors: &[&PiecewiseCdf]) -> Result<Self> {
        if factors.is_empty() {
            return Self::step(vec![0.0], vec![1.0]);
        }
        if factors.iter().any(|f| f.interpolation != Interpolation::Step) {
            return Err(Error::Validation("product is defined for staircases only".into()));
        }
        let pts = union_points(factors.iter().map(|f| f.breakpoints()), &[]);
        let vals: Vec<f64> = pts.iter().map(|&x| factors.iter().map(|f| f.eval(x)).product()).collect();
        let full = factors.iter().all(|f| f.is_full_cdf);
        Self::new(pts, vals, Interpolation::Step, full)
    }
}

impl Distribution1D for PiecewiseCdf {
    fn cdf(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn quantile(&self, q: f64) -> f64 {
        self.inverse_unchecked(q.min(self.terminal()))
    }
}

/// Sub-distribution function (terminal value may be below 1), e.g. `H_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubCdf(PiecewiseCdf);

impl SubCdf {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        PiecewiseCdf::new(breakpoints, values, interpolation, false).map(SubCdf)
    }

    pub fn zero() -> Self {
        SubCdf(PiecewiseCdf::new(vec![0.0], vec![0.0], Interpolation::Step, false).expect("valid"))
    }

    /// `(1/n_total) #{samples <= x}` for a subset of a sample of size `n_total`.
    pub fn empirical(subset: &[f64], n_total: usize) -> Result<Self> {
        if n_total == 0 {
            return Err(Error::Domain("empirical sub-CDF with n = 0".into()));
        }
        if subset.is_empty() {
            return Ok(Self::zero());
        }
        let (bps, vals) = staircase_counts(subset, n_total)?;
        Self::new(bps, vals, Interpolation::Step)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    pub fn eval_left(&self, x: f64) -> f64 {
        self.0.eval_left(x)
    }

    pub fn terminal(&self) -> f64 {
        self.0.terminal()
    }

    pub fn as_piecewise(&self) -> &PiecewiseCdf {
        &self.0
    }

    pub fn into_inner(self) -> PiecewiseCdf {
        self.0
    }
}

fn staircase_counts(samples: &[f64], n_total: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s = samples.to_vec();
    if let Some(bad) = s.iter().find(|x| !x.is_finite() || !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("sample {bad} outside [0,1]")));
    }
    s.sort_by(f64::total_cmp);
    let mut bps = Vec::new();
    let mut vals = Vec::new();
    for (j, &x) in s.iter().enumerate() {
        let c = (j + 1) as f64 / n_total as f64;
        if bps.last() == Some(&x) {
            *vals.last_mut().expect("nonempty") = c;
        } else {
            bps.push(x);
            vals.push(c);
        }
    }
    Ok((bps, vals))
}

/// Piecewise-linear density on [0, 1] with declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDensity")]
pub struct BoundedDensityModel {
    knots: Vec<f64>,
    density: Vec<f64>,
    alpha_lo: f64,
    eta_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz: Option<f64>,
    #[serde(skip)]
    mass: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDensity {
    knots: Vec<f64>,
    density: Vec<f64>,
    alpha_lo: f64,
    eta_hi: f64,
    #[serde(default)]
    lipschitz: Option<f64>,
}

impl TryFrom<RawDensity> for BoundedDensityModel {
    type Error = Error;

    fn try_from(r: RawDensity) -> Result<Self> {
        BoundedDensityModel::new(r.knots, r.density, r.alpha_lo, r.eta_hi, r.lipschitz)
    }
}

impl BoundedDensityModel {
    pub fn new(
        knots: Vec<f64>,
        density: Vec<f64>,
        alpha_lo: f64,
        eta_hi: f64,
        lipschitz: Option<f64>,
    ) -> Result<Self> {
        if knots.len() < 2 || knots.len() != density.len() {
            return Err(Error::Validation("density needs >= 2 knots and one value per knot".into()));
        }
        if knots[0] != 0.0 || *knots.last().expect("nonempty") != 1.0 {
            return Err(Error::Validation("density knots must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("density knots must be strictly ascending".into()));
        }
        if !(alpha_lo >= 0.0 && alpha_lo <= eta_hi && eta_hi.is_finite()) {
            return Err(Error::Validation(format!("bad density bounds [{alpha_lo}, {eta_hi}]")));
        }
        for (j, &d) in density.iter().enumerate() {
            if !d.is_finite() || d < alpha_lo - 1e-12 || d > eta_hi + 1e-12 {
                return Err(Error::Validation(format!(
                    "density {d} at knot {j} outside [{alpha_lo}, {eta_hi}]"
                )));
            }
        }
        if let Some(l) = lipschitz {
            for j in 0..knots.len() - 1 {
                let slope = (density[j + 1] - density[j]) / (knots[j + 1] - knots[j]);
                if slope.abs() > l + 1e-12 {
                    return Err(Error::Validation(format!(
                        "density slope {slope} on piece {j} exceeds Lipschitz constant {l}"
                    )));
                }
            }
        }
        let mut mass = vec![0.0];
        for j in 0..knots.len() - 1 {
            let w = knots[j + 1] - knots[j];
            mass.push(mass[j] + 0.5 * (density[j] + density[j + 1]) * w);
        }
        let total = *mass.last().expect("nonempty");
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Validation(format!("density integrates to {total}, not 1")));
        }
        Ok(Self { knots, density, alpha_lo, eta_hi, lipschitz, mass })
    }

    pub fn uniform() -> Self {
        Self::new(vec![0.0, 1.0], vec![1.0, 1.0], 1.0, 1.0, Some(0.0)).expect("valid")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn alpha_lo(&self) -> f64 {
        self.alpha_lo
    }

    pub fn eta_hi(&self) -> f64 {
        self.eta_hi
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    fn piece(&self, x: f64) -> usize {
        (self.knots.partition_point(|&k| k <= x).max(1) - 1).min(self.knots.len() - 2)
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let j = self.piece(x);
        let t = (x - self.knots[j]) / (self.knots[j + 1] - self.knots[j]);
        self.density[j] + t * (self.density[j + 1] - self.density[j])
    }

    /// Linear interpolant of the CDF on `cells` equal cells plus the knots.
    pub fn to_piecewise_cdf(&self, cells: usize) -> PiecewiseCdf {
        PiecewiseCdf::from_fn(|x| self.cdf(x), cells, &self.knots).expect("density CDF is valid")
    }
}

impl Distribution1D for BoundedDensityModel {
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let j = self.piece(x);
        let w = self.knots[j + 1] - self.knots[j];
        let s = (self.density[j + 1] - self.density[j]) / w;
        let t = x - self.knots[j];
        (self.mass[j] + self.density[j] * t + 0.5 * s * t * t).clamp(0.0, 1.0)
    }

    fn quantile(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        let j = (self.mass.partition_point(|&m| m < q).max(1) - 1).min(self.knots.len() - 2);
        let w = self.knots[j + 1] - self.knots[j];
        let d0 = self.density[j];
        let s = (self.density[j + 1] - d0) / w;
        let r = q - self.mass[j];
        if r <= 0.0 {
            return self.knots[j];
        }
        // Stable root of (s/2) t^2 + d0 t - r = 0.
        let disc = (d0 * d0 + 2.0 * s * r).max(0.0);
        let denom = d0 + disc.sqrt();
        let t = if denom > 0.0 { 2.0 * r / denom } else { w };
        (self.knots[j] + t.clamp(0.0, w)).clamp(0.0, 1.0)
    }
}

/// Sorted, deduplicated union of several breakpoint lists and extra points.
fn union_points<'a>(lists: impl Iterator<Item = &'a [f64]>, extra: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = lists.flat_map(|l| l.iter().copied()).collect();
    pts.extend_from_slice(extra);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `sup_x |F(x) - G(x)|` over [0, 1], exact.
pub fn kolmogorov(f: &PiecewiseCdf, g: &PiecewiseCdf) -> f64 {
    kolmogorov_on(f, g, 0.0, 1.0)
}

/// `sup_{x in [lo, hi]} |F(x) - G(x)|`, exact: the difference is linear
/// between consecutive breakpoints, so one-sided values at breakpoints suffice.
pub fn kolmogorov_on(f: &PiecewiseCdf, g: &PiecewiseCdf, lo: f64, hi: f64) -> f64 {
    let pts = union_points([f.breakpoints(), g.breakpoints()].into_iter(), &[lo, hi]);
    let mut best = 0.0f64;
    for &x in pts.iter().filter(|&&x| x >= lo && x <= hi) {
        best = best.max((f.eval(x) - g.eval(x)).abs());
        if x > lo {
            best = best.max((f.eval_left(x) - g.eval_left(x)).abs());
        }
    }
    best
}

/// `sup_{x in [lo, hi]} |F(x) - truth(x)|` for a staircase `F` and a continuous
/// nondecreasing `truth`. Exact because on each constant piece of `F` the gap
/// is monotone.
pub fn sup_distance_to_fn(f: &PiecewiseCdf, truth: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let pts = union_points([f.breakpoints()].into_iter(), &[lo, hi]);
    let mut best = 0.0f64;
    for &x in pts.iter().filter(|&&x| x >= lo && x <= hi) {
        let t = truth(x);
        best = best.max((f.eval(x) - t).abs());
        if x > lo {
            best = best.max((f.eval_left(x) - t).abs());
        }
    }
    best
}

/// `int_0^1 |F(x) - G(x)| dx` in closed form over linear pieces.
pub fn wasserstein1(f: &PiecewiseCdf, g: &PiecewiseCdf) -> f64 {
    let pts = union_points([f.breakpoints(), g.breakpoints()].into_iter(), &[0.0, 1.0]);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = f.eval(a) - g.eval(a);
        let db = f.eval_left(b) - g.eval_left(b);
        total += abs_linear_integral(da, db) * (b - a);
    }
    total
}

/// Mean of `|l(t)|` over [0, 1] for the line through `l(0)=a`, `l(1)=b`.
fn abs_linear_integral(a: f64, b: f64) -> f64 {
    if a * b >= 0.0 {
        0.5 * (a.abs() + b.abs())
    } else {
        (a * a + b * b) / (2.0 * (a.abs() + b.abs()))
    }
}

/// `for all x: A(x) <= B(x + eps) + eps`, checked at every breakpoint-induced
/// candidate with both one-sided limits.
fn levy_half(a: &PiecewiseCdf, b: &PiecewiseCdf, eps: f64) -> bool {
    const SLACK: f64 = 1e-12;
    let ok = |xa: f64, xb: f64| {
        a.eval(xa) <= b.eval(xb) + eps + SLACK && a.eval_left(xa) <= b.eval_left(xb) + eps + SLACK
    };
    let ends = [0.0, 1.0];
    a.breakpoints().iter().chain(&ends).all(|&x| ok(x, x + eps))
        && b.breakpoints().iter().chain(&ends).all(|&y| ok(y - eps, y))
}

/// Exact feasibility of `eps` in the Lévy band condition.
pub fn levy_feasible(f: &PiecewiseCdf, g: &PiecewiseCdf, eps: f64) -> bool {
    levy_half(g, f, eps) && levy_half(f, g, eps)
}

/// Lévy distance by bisection to [`LEVY_TOL`].
pub fn levy(f: &PiecewiseCdf, g: &PiecewiseCdf) -> f64 {
    levy_with_tol(f, g, LEVY_TOL)
}

/// Lévy distance by bisection. The bracket starts at
/// `min(kolmogorov, sqrt(wasserstein1))`, both of which are feasible, so the
/// returned upper end never exceeds either.
pub fn levy_with_tol(f: &PiecewiseCdf, g: &PiecewiseCdf, tol: f64) -> f64 {
    if levy_feasible(f, g, 0.0) {
        return 0.0;
    }
    let mut hi = kolmogorov(f, g).min(wasserstein1(f, g).sqrt()).min(1.0);
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if levy_feasible(f, g, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// DKW band `sqrt(ln(2/delta) / (2n))`.
pub fn dkw_band(n: u64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Parameter("dkw_band needs n >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("dkw_band needs delta in (0,1), got {delta}")));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn square_cdf() -> PiecewiseCdf {
        PiecewiseCdf::from_fn(|x| x * x, 100, &[]).unwrap()
    }

    #[test]
    fn eval_conventions() {
        let u = PiecewiseCdf::uniform();
        assert!((u.eval(0.3) - 0.3).abs() < 1e-15);
        assert_eq!(u.eval(-0.1), 0.0);
        assert_eq!(u.eval(1.5), 1.0);
        let atom = PiecewiseCdf::point_mass(0.5).unwrap();
        assert_eq!(atom.eval(0.5), 1.0);
        assert_eq!(atom.eval_left(0.5), 0.0);
        assert_eq!(atom.eval(0.4999), 0.0);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(PiecewiseCdf::step(vec![0.5, 0.4], vec![0.2, 1.0]).is_err());
        assert!(PiecewiseCdf::step(vec![0.1, 0.4], vec![0.6, 0.2]).is_err());
        assert!(PiecewiseCdf::step(vec![0.1, 1.2], vec![0.2, 1.0]).is_err());
        assert!(PiecewiseCdf::new(vec![0.1], vec![0.7], Interpolation::Step, true).is_err());
    }

    #[test]
    fn inverse_examples() {
        let u = PiecewiseCdf::uniform();
        assert!((u.inverse(0.25).unwrap() - 0.25).abs() < 1e-15);
        let flat = PiecewiseCdf::step(vec![0.0, 0.2, 0.6], vec![0.1, 0.5, 1.0]).unwrap();
        assert_eq!(flat.inverse(0.5).unwrap(), 0.2);
        let sq = square_cdf();
        let x = sq.inverse(0.25).unwrap();
        // Bisection oracle on the closed form.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            if m * m >= 0.25 {
                hi = m
            } else {
                lo = m
            }
        }
        assert!((x - hi).abs() < 1e-9);
        assert!(u.inverse(1.2).is_err());
        assert!(u.inverse(-0.1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_respects_atoms() {
        let u = PiecewiseCdf::uniform();
        let a = u.sample(&mut SeedTree::new(11).stream(0));
        let b = u.sample(&mut SeedTree::new(11).stream(0));
        assert_eq!(a, b);
        let atom = PiecewiseCdf::point_mass(0.7).unwrap();
        let mut rng = SeedTree::new(3).stream(0);
        for _ in 0..1000 {
            assert_eq!(atom.sample(&mut rng), 0.7);
        }
    }

    #[test]
    fn sample_mean_of_square_cdf() {
        let sq = PiecewiseCdf::from_fn(|x| x * x, 2000, &[]).unwrap();
        let mut rng = SeedTree::new(5).stream(0);
        let n = 100_000;
        let mean = (0..n).map(|_| sq.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn distance_examples() {
        let u = PiecewiseCdf::uniform();
        let d0 = PiecewiseCdf::point_mass(0.0).unwrap();
        let d1 = PiecewiseCdf::point_mass(1.0).unwrap();
        let half = PiecewiseCdf::point_mass(0.5).unwrap();
        assert_eq!(kolmogorov(&u, &u), 0.0);
        assert_eq!(kolmogorov(&d0, &d1), 1.0);
        assert_eq!(wasserstein1(&u, &u), 0.0);
        assert!((wasserstein1(&d0, &d1) - 1.0).abs() < 1e-15);
        // Midpoint-rule quadrature oracle for uniform vs atom at 1/2.
        let m = 200_000;
        let quad: f64 = (0..m)
            .map(|j| {
                let x = (j as f64 + 0.5) / m as f64;
                (x - if x >= 0.5 { 1.0 } else { 0.0 }).abs()
            })
            .sum::<f64>()
            / m as f64;
        assert!((wasserstein1(&u, &half) - quad).abs() < 1e-9);
        assert!((wasserstein1(&u, &half) - 0.25).abs() < 1e-12);
        assert_eq!(levy(&u, &u), 0.0);
    }

    #[test]
    fn levy_point_masses_match_grid_oracle() {
        for &d in &[0.05, 0.2, 0.37] {
            let f = PiecewiseCdf::point_mass(0.0).unwrap();
            let g = PiecewiseCdf::point_mass(d).unwrap();
            let got = levy(&f, &g);
            // Brute force: smallest eps on a 0.001 grid whose band holds on a dense x grid.
            let holds = |eps: f64| {
                (0..=4000).all(|j| {
                    let x = -1.0 + 3.0 * j as f64 / 4000.0;
                    let fx = |t: f64| if t >= 0.0 { 1.0 } else { 0.0 };
                    let gx = |t: f64| if t >= d { 1.0 } else { 0.0 };
                    fx(x - eps) - eps <= gx(x) + 1e-12 && gx(x) <= fx(x + eps) + eps + 1e-12
                })
            };
            let grid = (0..=1000).map(|j| j as f64 / 1000.0).find(|&e| holds(e)).unwrap();
            assert!((got - d).abs() < 2e-6, "levy {got} vs {d}");
            assert!(got <= grid + 1e-6 && grid - got <= 1e-3 + 1e-6, "levy {got} grid {grid}");
        }
    }

    #[test]
    fn restricted_sup_and_truth_sup() {
        let est = PiecewiseCdf::step(vec![0.0, 0.5], vec![0.4, 1.0]).unwrap();
        let d = sup_distance_to_fn(&est, |x| x, 0.0, 1.0);
        assert!((d - 0.5).abs() < 1e-12);
        let d_on = sup_distance_to_fn(&est, |x| x, 0.6, 1.0);
        assert!((d_on - 0.4).abs() < 1e-12);
        let k_on = kolmogorov_on(&est, &PiecewiseCdf::uniform(), 0.6, 1.0);
        assert!((k_on - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dkw_values() {
        let b = dkw_band(20_000, 0.05).unwrap();
        assert!((b - 0.009_603_3).abs() < 1e-6, "band {b}");
        let near_one = dkw_band(100, 1.0 - 1e-12).unwrap();
        assert!((near_one - (2f64.ln() / 200.0).sqrt()).abs() < 1e-9);
        assert!(dkw_band(0, 0.1).is_err());
        assert!(dkw_band(10, 0.0).is_err());
    }

    #[test]
    fn dkw_coverage_monte_carlo() {
        let sq = PiecewiseCdf::from_fn(|x| x * x, 1000, &[]).unwrap();
        let n = 500;
        let band = dkw_band(n, 0.05).unwrap();
        let tree = SeedTree::new(99);
        let trials = 2000u64;
        let covered = (0..trials)
            .filter(|&t| {
                let mut rng = tree.stream(t);
                let xs: Vec<f64> = (0..n).map(|_| sq.sample(&mut rng)).collect();
                let ecdf = PiecewiseCdf::empirical(&xs).unwrap();
                kolmogorov(&ecdf, &sq) < band
            })
            .count();
        // Massart's constant is asymptotically tight, so the true coverage sits
        // just above 0.95; allow three binomial standard deviations.
        let sd = (0.05f64 * 0.95 / trials as f64).sqrt();
        let freq = covered as f64 / trials as f64;
        assert!(freq >= 0.95 - 3.0 * sd, "coverage {covered}/{trials}");
    }

    #[test]
    fn density_model_cdf_and_quantile() {
        let m = BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.5], 0.5, 1.5, Some(1.0)).unwrap();
        // F(x) = 0.5x + 0.5x^2
        for &x in &[0.1, 0.4, 0.77] {
            let f = 0.5 * x + 0.5 * x * x;
            assert!((m.cdf(x) - f).abs() < 1e-14);
            assert!((m.quantile(f) - x).abs() < 1e-12);
        }
        assert!(BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.0], 0.5, 1.5, None).is_err());
        assert!(BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.5], 0.6, 1.5, None).is_err());
        assert!(BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.5], 0.5, 1.5, Some(0.5)).is_err());
        let lin = m.to_piecewise_cdf(4096);
        assert!(sup_distance_to_fn(&lin.to_step(20_000).unwrap(), |x| m.cdf(x), 0.0, 1.0) < 2e-4);
    }

    #[test]
    fn json_round_trip() {
        let f = PiecewiseCdf::step(vec![0.1, 0.3333333333333333, 0.9], vec![0.1, 0.7000000000000001, 1.0])
            .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"interpolation\":\"step\""));
        let back: PiecewiseCdf = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let bad = r#"{"interpolation":"step","breakpoints":[0.5,0.2],"values":[0.1,1.0],"is_full_cdf":true}"#;
        assert!(serde_json::from_str::<PiecewiseCdf>(bad).is_err());
    }

    #[test]
    fn product_of_staircases() {
        let a = PiecewiseCdf::step(vec![0.2, 0.6], vec![0.5, 1.0]).unwrap();
        let b = PiecewiseCdf::step(vec![0.4], vec![1.0]).unwrap();
        let p = PiecewiseCdf::product(&[&a, &b]).unwrap();
        assert_eq!(p.eval(0.3), 0.0);
        assert_eq!(p.eval(0.5), 0.5);
        assert_eq!(p.eval(0.7), 1.0);
    }
}
