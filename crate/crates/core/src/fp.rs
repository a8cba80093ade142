//! First-price bid distribution estimation from `(Y, Z)` observations.
//!
//! With `H` the CDF of the winning bid and `H_i` its restriction to wins by
//! `i`, the bid CDFs are identified by `F_i(x) = exp(-int_x^1 dH_i / H)`. The
//! estimator replaces both by empirical versions:
//! `G_i(x) = (1/n) sum_j 1{Y_j >= x, Z_j = i} / H(Y_j)` and `F_i = exp(-G_i)`.

use serde::{Deserialize, Serialize};

use crate::dist::{Interpolation, PiecewiseCdf, SubCdf};
use crate::error::{Error, Result};
use crate::numeric::gauss_legendre;
use crate::sim::FpSampleSet;

/// Settings of the effective-support estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpEstimatorConfig {
    /// Start of the effective support.
    pub p: f64,
    /// Lower bound on `Pr(Y <= p)`.
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
    /// Floor applied to `H(Y_j)` in the weights.
    pub h_floor: f64,
}

impl FpEstimatorConfig {
    /// Config with the default floor `gamma / 2`.
    pub fn new(p: f64, gamma: f64, eps: f64, delta: f64) -> Result<Self> {
        Self { p, gamma, eps, delta, h_floor: gamma / 2.0 }.validated()
    }

    pub fn with_h_floor(self, h_floor: f64) -> Result<Self> {
        Self { h_floor, ..self }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Parameter(format!("p = {} outside [0,1]", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma = {} outside (0,1]", self.gamma)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Parameter(format!("eps = {} outside (0,1]", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta = {} outside (0,1)", self.delta)));
        }
        if !(self.h_floor > 0.0) {
            return Err(Error::Parameter(format!("h_floor = {} must be positive", self.h_floor)));
        }
        Ok(self)
    }

    /// Whether `eps <= gamma / 2`, the range in which the accuracy guarantee is stated.
    pub fn guarantee_applies(&self) -> bool {
        self.eps <= self.gamma / 2.0
    }
}

/// Nonincreasing step function `G_i(x) = sum of weights of samples with Y >= x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GHat {
    ys: Vec<f64>,
    /// `tail[m]` = total weight at `ys[m..]`; one extra trailing 0.
    tail: Vec<f64>,
}

impl GHat {
    fn from_weighted(mut pts: Vec<(f64, f64)>) -> Self {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ys: Vec<f64> = Vec::with_capacity(pts.len());
        let mut ws: Vec<f64> = Vec::with_capacity(pts.len());
        for (y, w) in pts {
            if ys.last() == Some(&y) {
                *ws.last_mut().expect("nonempty") += w;
            } else {
                ys.push(y);
                ws.push(w);
            }
        }
        let mut tail = vec![0.0; ys.len() + 1];
        for m in (0..ys.len()).rev() {
            tail[m] = tail[m + 1] + ws[m];
        }
        Self { ys, tail }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.tail[self.ys.partition_point(|&y| y < x)]
    }

    /// Value just to the right of `x`: weight of samples with `Y > x`.
    pub fn eval_right(&self, x: f64) -> f64 {
        self.tail[self.ys.partition_point(|&y| y <= x)]
    }

    pub fn support_points(&self) -> &[f64] {
        &self.ys
    }

    /// Right-continuous staircase `exp(-G(x+))`.
    pub fn to_fhat(&self) -> Result<PiecewiseCdf> {
        let mut bps = Vec::with_capacity(self.ys.len() + 1);
        if self.ys.first().is_none_or(|&y| y > 0.0) {
            bps.push(0.0);
        }
        bps.extend_from_slice(&self.ys);
        let vals = bps.iter().map(|&x| (-self.eval_right(x)).exp().clamp(0.0, 1.0)).collect();
        PiecewiseCdf::new(bps, vals, Interpolation::Step, true)
    }
}

/// Empirical CDF of the winning bids.
pub fn empirical_h(samples: &FpSampleSet) -> Result<PiecewiseCdf> {
    PiecewiseCdf::empirical(&samples.ys())
}

/// `(1/n) #{j : Y_j <= x, Z_j = i}`.
pub fn empirical_hi(samples: &FpSampleSet, i: usize) -> Result<SubCdf> {
    if i >= samples.k() {
        return Err(Error::Domain(format!("bidder {} outside 1..={}", i + 1, samples.k())));
    }
    let sub: Vec<f64> = samples.observations().iter().filter(|o| o.winner == i).map(|o| o.y).collect();
    SubCdf::empirical(&sub, samples.len())
}

/// Per-bidder `G_i` and the number of observations whose weight was floored.
fn ghat_all(samples: &FpSampleSet, h_floor: f64) -> Result<(Vec<GHat>, usize)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Domain("no observations".into()));
    }
    let mut sorted = samples.ys();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut per: Vec<Vec<(f64, f64)>> = vec![Vec::new(); samples.k()];
    let mut clipped = 0;
    for o in samples.observations() {
        let h = sorted.partition_point(|&y| y <= o.y) as f64 / nf;
        if h < h_floor {
            clipped += 1;
        }
        per[o.winner].push((o.y, 1.0 / (nf * h.max(h_floor))));
    }
    Ok((per.into_iter().map(GHat::from_weighted).collect(), clipped))
}

/// `G_i` for one bidder.
pub fn estimate_ghat(samples: &FpSampleSet, i: usize, config: &FpEstimatorConfig) -> Result<GHat> {
    if i >= samples.k() {
        return Err(Error::Domain(format!("bidder {} outside 1..={}", i + 1, samples.k())));
    }
    Ok(ghat_all(samples, config.h_floor)?.0.swap_remove(i))
}

/// What an estimator run used and observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpDiagnostics {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub gamma: f64,
    pub eps: f64,
    pub h_floor: f64,
    /// Fraction of observations whose `H(Y_j)` fell below the floor.
    pub clip_rate: f64,
    pub guarantee_applies: bool,
}

/// Estimated bid CDFs plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpEstimate {
    pub cdfs: Vec<PiecewiseCdf>,
    pub diagnostics: FpDiagnostics,
}

/// Effective-support estimator `F_i = exp(-G_i)`.
pub fn estimate_bid_cdf_effective(samples: &FpSampleSet, config: &FpEstimatorConfig) -> Result<FpEstimate> {
    let config = config.validated()?;
    let (ghats, clipped) = ghat_all(samples, config.h_floor)?;
    let cdfs = ghats.iter().map(GHat::to_fhat).collect::<Result<Vec<_>>>()?;
    let diagnostics = FpDiagnostics {
        n: samples.len(),
        k: samples.k(),
        p: config.p,
        gamma: config.gamma,
        eps: config.eps,
        h_floor: config.h_floor,
        clip_rate: clipped as f64 / samples.len() as f64,
        guarantee_applies: config.guarantee_applies(),
    };
    Ok(FpEstimate { cdfs, diagnostics })
}

/// Effective-support parameters used by the full-support estimator:
/// `eta = eps/2`, `p = eta`, `gamma = (lambda eta)^k`.
pub fn full_support_config(k: usize, lambda: f64, eps: f64, delta: f64) -> Result<FpEstimatorConfig> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda = {lambda} must be positive")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Parameter(format!("eps = {eps} outside (0,1]")));
    }
    let eta = eps / 2.0;
    let gamma = (lambda * eta).powi(k as i32).min(1.0);
    if gamma < 1e-300 {
        return Err(Error::Parameter(format!(
            "gamma = (lambda eps/2)^k underflows for k = {k}; use a larger eps or fewer bidders"
        )));
    }
    FpEstimatorConfig::new(eta, gamma, eps, delta)
}

/// Full-support estimator: effective-support estimate with zero extension below `eps/2`.
pub fn estimate_bid_cdf_full(samples: &FpSampleSet, lambda: f64, eps: f64, delta: f64) -> Result<FpEstimate> {
    let config = full_support_config(samples.k(), lambda, eps, delta)?;
    let mut est = estimate_bid_cdf_effective(samples, &config)?;
    est.cdfs = est.cdfs.iter().map(|f| f.zero_below(config.p)).collect::<Result<Vec<_>>>()?;
    Ok(est)
}

/// Forward-difference density `(F(x+h) - F(x)) / h` on `[p, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub h: f64,
    pub p: f64,
    pub cdf: PiecewiseCdf,
}

impl DensityEstimate {
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.p || x > 1.0 {
            return 0.0;
        }
        (self.cdf.eval(x + self.h) - self.cdf.eval(x)) / self.h
    }

    /// Points where the estimate may be non-smooth inside `[lo, hi]`.
    pub fn knots(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo, hi];
        for &b in self.cdf.breakpoints() {
            pts.push(b);
            pts.push(b - self.h);
        }
        pts.retain(|&x| x >= lo && x <= hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `int_lo^hi |f_hat - f|`, quadrature on the pieces between knots.
    pub fn l1_error(&self, f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let pts = self.knots(lo, hi);
        pts.windows(2).map(|w| gauss_legendre(|x| (self.eval(x) - f(x)).abs(), w[0], w[1], 4)).sum()
    }
}

pub fn estimate_density(fhat: &PiecewiseCdf, h: f64, p: f64) -> Result<DensityEstimate> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Parameter(format!("bandwidth h = {h} outside (0,1]")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("p = {p} outside [0,1]")));
    }
    Ok(DensityEstimate { h, p, cdf: fhat.clone() })
}

/// Bandwidth `sqrt(eps0 / L)` balancing the two error terms.
pub fn recommended_bandwidth(eps0: f64, lipschitz: f64) -> f64 {
    (eps0 / lipschitz).sqrt()
}

/// L1 bound `L h + 2 eps0 / h` for a CDF estimate with sup error `eps0`.
pub fn density_error_bound(lipschitz: f64, h: f64, eps0: f64) -> f64 {
    lipschitz * h + 2.0 * eps0 / h
}

/// CDF accuracy needed for density accuracy `eps`: `eps = eps0^2 / (9L)` solved for `eps0`.
pub fn density_eps0_for(eps: f64, lipschitz: f64) -> f64 {
    (9.0 * lipschitz * eps).sqrt()
}

/// Population identity `exp(-int_x^1 dH_i / H)` for closed-form `H`, `H_i`,
/// by a midpoint Stieltjes sum on `cells` cells.
pub fn population_fhat(h: impl Fn(f64) -> f64, h_i: impl Fn(f64) -> f64, x: f64, cells: usize) -> f64 {
    let cells = cells.max(1);
    let step = (1.0 - x) / cells as f64;
    let mut total = 0.0;
    let mut prev = h_i(x);
    for m in 0..cells {
        let a = x + m as f64 * step;
        let next = h_i(a + step);
        let mid = h(a + 0.5 * step);
        if mid > 0.0 {
            total += (next - prev) / mid;
        }
        prev = next;
    }
    (-total).exp()
}
