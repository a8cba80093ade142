//! Second-price bid distribution estimation from `(Y, W)` observations,
//! where `Y` is the second-highest bid and `W` the winner.
//!
//! With `U_i = prod_{j != i} F_j` and `G_i(x) = Pr(W = i, Y <= x)`,
//! `dU_i = dG_i / (1 - F_i)` and `F_i` is itself a function of all the `U_j`.
//! The estimator solves a discretized version of this fixed-point equation
//! stage by stage on data-driven macro-intervals, each short enough for the
//! stage map to be a contraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{dkw_band, Interpolation, PiecewiseCdf, SubCdf};
use crate::error::{Error, Result};
use crate::isotonic::pava;
use crate::rng::{SeedTree, Stream};
use crate::sim::SpSampleSet;
use rand::Rng;

/// Which bound decides how long a macro-interval may grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaRule {
    /// `16 (eta/alpha)^6 / U(x_{tau-1}) * sum_m x_m / (1 - x_m)^2 * Delta_m`.
    Paper,
    /// Lipschitz bound of the stage map over its clip box:
    /// `sum_m Delta_m / (1 - hi_m)^2 * sum_j |dH/dU_j|`.
    SBoxBound,
}

/// What to do when not even one micro-interval fits under the contraction cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StallPolicy {
    Error,
    /// End the grid at the stall point; recovery extends the last value up to `1 - theta`.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpParams {
    pub alpha: f64,
    pub eta: f64,
    pub eps: f64,
    /// Edge margin: estimates are 0 below `theta` and 1 above `1 - theta`.
    pub theta: f64,
    /// Start of the fixed-point range.
    pub nu: f64,
    pub micro_delta: f64,
    pub eps_g: f64,
    pub fp_iters: u32,
    pub contractivity_cap: f64,
    pub gamma_rule: GammaRule,
    pub stall: StallPolicy,
    /// Random pairs per macro-interval used for the reported contraction ratio.
    pub contraction_pairs: usize,
}

/// Optional replacements for the desk defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpOverrides {
    pub nu: Option<f64>,
    pub theta: Option<f64>,
    pub micro_delta: Option<f64>,
    pub eps_g: Option<f64>,
    pub fp_iters: Option<u32>,
    pub gamma_rule: Option<GammaRule>,
    pub stall: Option<StallPolicy>,
    pub contraction_pairs: Option<usize>,
}

/// `ceil(log_4(4 / eps_g))`.
pub fn default_fp_iters(eps_g: f64) -> u32 {
    ((4.0 / eps_g.max(1e-9)).ln() / 4f64.ln()).ceil().max(1.0) as u32
}

impl SpParams {
    /// Desk defaults for `n` observations: `theta = max(eps/(16 eta), 0.02)`, `nu = min(0.05, theta/2)`,
    /// `micro_delta = 1e-3`, `eps_g = dkw_band(n, 0.05)`, `fp_iters = ceil(log4(4/eps_g))`.
    pub fn desk(alpha: f64, eta: f64, eps: f64, n: u64) -> Result<Self> {
        let eps_g = dkw_band(n.max(1), 0.05)?;
        let theta = (eps / (16.0 * eta)).max(0.02);
        Self {
            alpha,
            eta,
            eps,
            theta,
            nu: (0.5 * theta).min(0.05),
            micro_delta: 1e-3,
            eps_g,
            fp_iters: default_fp_iters(eps_g),
            contractivity_cap: 0.25,
            gamma_rule: GammaRule::SBoxBound,
            stall: StallPolicy::Truncate,
            contraction_pairs: 20,
        }
        .validated()
    }

    pub fn with_overrides(self, o: &SpOverrides) -> Result<Self> {
        let eps_g = o.eps_g.unwrap_or(self.eps_g);
        let fp_iters = o.fp_iters.unwrap_or(if o.eps_g.is_some() { default_fp_iters(eps_g) } else { self.fp_iters });
        Self {
            nu: o.nu.unwrap_or(self.nu),
            theta: o.theta.unwrap_or(self.theta),
            micro_delta: o.micro_delta.unwrap_or(self.micro_delta),
            eps_g,
            fp_iters,
            gamma_rule: o.gamma_rule.unwrap_or(self.gamma_rule),
            stall: o.stall.unwrap_or(self.stall),
            contraction_pairs: o.contraction_pairs.unwrap_or(self.contraction_pairs),
            ..self
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.alpha > 0.0 && self.alpha <= self.eta) {
            return bad(format!("need 0 < alpha <= eta, got alpha = {}, eta = {}", self.alpha, self.eta));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps = {} outside (0,1]", self.eps));
        }
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return bad(format!("theta = {} outside (0,1/2)", self.theta));
        }
        if !(self.nu > 0.0 && self.nu < self.theta) {
            return bad(format!("nu = {} must lie in (0, theta = {})", self.nu, self.theta));
        }
        if !(self.micro_delta > 0.0 && self.micro_delta < self.nu) {
            return bad(format!("micro_delta = {} must lie in (0, nu = {})", self.micro_delta, self.nu));
        }
        if !(self.eps_g > 0.0) {
            return bad(format!("eps_g = {} must be positive", self.eps_g));
        }
        if !(self.contractivity_cap > 0.0 && self.contractivity_cap < 1.0) {
            return bad(format!("contractivity cap {} outside (0,1)", self.contractivity_cap));
        }
        Ok(self)
    }

    /// Upper H-clip at `x`: `min(1 - alpha (1 - x), eta x)`.
    pub fn h_hi(&self, x: f64) -> f64 {
        (1.0 - self.alpha * (1.0 - x)).min(self.eta * x)
    }

    /// Lower H-clip at `x`: `alpha x`.
    pub fn h_lo(&self, x: f64) -> f64 {
        self.alpha * x
    }
}

/// `U_i(x) = (1/n) sum_j 1{W_j = i, Y_j <= x} / (1 - Y_j)`, evaluated on `[0, limit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseU {
    ys: Vec<f64>,
    cum: Vec<f64>,
    limit: f64,
}

impl CoarseU {
    /// Evaluation is capped at `limit` (values beyond it repeat `U(limit)`).
    pub fn eval(&self, x: f64) -> f64 {
        self.cum[self.ys.partition_point(|&y| y <= x.min(self.limit))]
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }
}

/// Coarse approximation of `U_i` on `[0, 1 - theta/4]`.
pub fn coarse_u(samples: &SpSampleSet, i: usize, theta: f64) -> Result<CoarseU> {
    if i >= samples.k() {
        return Err(Error::Domain(format!("bidder {} outside 1..={}", i + 1, samples.k())));
    }
    let n = samples.len() as f64;
    let mut ys: Vec<f64> =
        samples.observations().iter().filter(|o| o.winner == i && o.y < 1.0).map(|o| o.y).collect();
    ys.sort_by(f64::total_cmp);
    let mut cum = Vec::with_capacity(ys.len() + 1);
    cum.push(0.0);
    for &y in &ys {
        let last = *cum.last().expect("nonempty");
        cum.push(last + 1.0 / (n * (1.0 - y)));
    }
    Ok(CoarseU { ys, cum, limit: 1.0 - theta / 4.0 })
}

/// `(1/n) #{j : W_j = i, Y_j <= x}`.
pub fn empirical_g_sp(samples: &SpSampleSet, i: usize) -> Result<SubCdf> {
    if samples.is_empty() {
        return Err(Error::Domain("no observations".into()));
    }
    if i >= samples.k() {
        return Err(Error::Domain(format!("bidder {} outside 1..={}", i + 1, samples.k())));
    }
    let sub: Vec<f64> = samples.observations().iter().filter(|o| o.winner == i).map(|o| o.y).collect();
    SubCdf::empirical(&sub, samples.len())
}

/// A monotone function of one variable.
pub type MonotoneFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// The functions the pipeline consumes: `G_i` (increments drive the map) and
/// coarse `U_i` (clip box). Built from data or supplied in closed form.
pub struct SpInputs {
    pub g: Vec<MonotoneFn>,
    pub coarse: Vec<MonotoneFn>,
}

impl SpInputs {
    pub fn from_samples(samples: &SpSampleSet, theta: f64) -> Result<Self> {
        let mut g: Vec<MonotoneFn> = Vec::with_capacity(samples.k());
        let mut coarse: Vec<MonotoneFn> = Vec::with_capacity(samples.k());
        for i in 0..samples.k() {
            let gi = empirical_g_sp(samples, i)?;
            g.push(Box::new(move |x| gi.eval(x)));
            let ui = coarse_u(samples, i, theta)?;
            coarse.push(Box::new(move |x| ui.eval(x)));
        }
        Ok(Self { g, coarse })
    }

    pub fn population(g: Vec<MonotoneFn>, coarse: Vec<MonotoneFn>) -> Result<Self> {
        if g.len() < 2 || g.len() != coarse.len() {
            return Err(Error::Validation("need k >= 2 matching G and U functions".into()));
        }
        Ok(Self { g, coarse })
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }
}

/// Why grid construction stopped short of `1 - theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStall {
    pub tau: usize,
    pub x: f64,
    /// Bound after a single micro-interval.
    pub gamma_first: f64,
}

/// Macro-interval layout; micro points are `starts[tau] + l * micro_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpGrid {
    pub nu: f64,
    pub micro_delta: f64,
    /// Left endpoint `x_{tau-1}` of each macro-interval.
    pub starts: Vec<f64>,
    /// Micro-interval counts.
    pub counts: Vec<usize>,
    /// Contraction bound of each macro-interval at its final length.
    pub gammas: Vec<f64>,
    pub stall: Option<GridStall>,
}

impl SpGrid {
    /// Number of macro-intervals `T`.
    pub fn t(&self) -> usize {
        self.counts.len()
    }

    /// Micro points `x_{tau,1..=ell}` of macro-interval `tau` (0-based).
    pub fn micro_points(&self, tau: usize) -> Vec<f64> {
        (1..=self.counts[tau]).map(|l| self.starts[tau] + l as f64 * self.micro_delta).collect()
    }

    pub fn end(&self, tau: usize) -> f64 {
        self.starts[tau] + self.counts[tau] as f64 * self.micro_delta
    }

    /// `x_0, x_1, ..., x_T`.
    pub fn endpoints(&self) -> Vec<f64> {
        let mut out = vec![self.nu];
        out.extend((0..self.t()).map(|t| self.end(t)));
        out
    }

    pub fn total_micro_points(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Per-bidder summand of the contraction bound for the micro-interval ending at `x`.
fn gamma_terms(inputs: &SpInputs, params: &SpParams, start: f64, prev: f64, x: f64, out: &mut [f64]) {
    let k = inputs.k();
    let kf = k as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let delta = ((inputs.g[i])(x) - (inputs.g[i])(prev)).max(0.0);
        *o = match params.gamma_rule {
            GammaRule::Paper => {
                let u0 = (inputs.coarse[i])(start);
                16.0 * (params.eta / params.alpha).powi(6) / u0 * x / ((1.0 - x) * (1.0 - x)) * delta
            }
            GammaRule::SBoxBound => {
                let hi = params.h_hi(x);
                let sens = if k == 2 {
                    1.0
                } else {
                    let rho = |j: usize| hi * 2.0 * params.eta / (inputs.coarse[j])(x);
                    let others: f64 = (0..k).filter(|&j| j != i).map(rho).sum::<f64>() / (kf - 1.0);
                    others + (kf - 2.0) / (kf - 1.0) * rho(i)
                };
                delta / ((1.0 - hi) * (1.0 - hi)) * sens
            }
        };
        if o.is_nan() {
            *o = f64::INFINITY;
        }
    }
}

/// Greedy macro-interval construction: each interval grows while its end stays
/// below `min(2 x_{tau-1}, 1 - theta/2)` and its contraction bound stays under the cap.
pub fn build_macro_intervals(inputs: &SpInputs, params: &SpParams) -> Result<SpGrid> {
    let params = params.validated()?;
    let k = inputs.k();
    let d = params.micro_delta;
    let top = 1.0 - params.theta / 2.0;
    let mut grid =
        SpGrid { nu: params.nu, micro_delta: d, starts: Vec::new(), counts: Vec::new(), gammas: Vec::new(), stall: None };
    let mut start = params.nu;
    let mut terms = vec![0.0; k];
    while start < 1.0 - params.theta {
        let cap = (2.0 * start).min(top) + 1e-12;
        let mut cum = vec![0.0; k];
        let mut ell = 0usize;
        let mut gamma_ok = 0.0;
        let mut gamma_first = f64::NAN;
        loop {
            let x = start + (ell + 1) as f64 * d;
            if x > cap {
                break;
            }
            let prev = start + ell as f64 * d;
            gamma_terms(inputs, &params, start, prev, x, &mut terms);
            for (c, t) in cum.iter_mut().zip(&terms) {
                *c += t;
            }
            let gamma = cum.iter().fold(0.0f64, |m, &v| m.max(v));
            if ell == 0 {
                gamma_first = gamma;
            }
            if gamma > params.contractivity_cap {
                break;
            }
            ell += 1;
            gamma_ok = gamma;
        }
        if ell == 0 {
            let stall = GridStall { tau: grid.t() + 1, x: start, gamma_first };
            match params.stall {
                StallPolicy::Error => {
                    return Err(Error::Estimator(format!(
                        "macro-interval {} at x = {start:.6} cannot hold one micro-interval (gamma_1 = {gamma_first:.4})",
                        stall.tau
                    )))
                }
                StallPolicy::Truncate => {
                    grid.stall = Some(stall);
                    break;
                }
            }
        }
        grid.starts.push(start);
        grid.counts.push(ell);
        grid.gammas.push(gamma_ok);
        start += ell as f64 * d;
    }
    if grid.t() == 0 {
        return Err(Error::Estimator("no macro-interval could be built".into()));
    }
    Ok(grid)
}

/// Everything the stage map of one macro-interval needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub tau: usize,
    pub xs: Vec<f64>,
    /// `delta[i][m]` = increment of `G_i` over micro-interval `m`.
    pub delta: Vec<Vec<f64>>,
    pub lo: Vec<Vec<f64>>,
    pub up: Vec<Vec<f64>>,
    pub h_lo: Vec<f64>,
    pub h_hi: Vec<f64>,
}

impl Stage {
    pub fn new(grid: &SpGrid, tau: usize, inputs: &SpInputs, params: &SpParams) -> Self {
        let xs = grid.micro_points(tau);
        let k = inputs.k();
        let mut delta = vec![Vec::with_capacity(xs.len()); k];
        let mut lo = vec![Vec::with_capacity(xs.len()); k];
        let mut up = vec![Vec::with_capacity(xs.len()); k];
        for i in 0..k {
            let mut prev = (inputs.g[i])(grid.starts[tau]);
            for &x in &xs {
                let g = (inputs.g[i])(x);
                delta[i].push((g - prev).max(0.0));
                prev = g;
                let u = (inputs.coarse[i])(x);
                lo[i].push(u / (2.0 * params.eta));
                up[i].push(2.0 * u / params.alpha);
            }
        }
        let h_lo = xs.iter().map(|&x| params.h_lo(x)).collect();
        // alpha = eta makes the two clips coincide; keep rounding from inverting them.
        let h_hi = xs.iter().map(|&x| params.h_hi(x).max(params.h_lo(x))).collect();
        Self { tau, xs, delta, lo, up, h_lo, h_hi }
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Whether `u` lies in the clip box with nondecreasing rows.
    pub fn contains(&self, u: &[Vec<f64>]) -> bool {
        let tol = 1e-12;
        u.iter().enumerate().all(|(i, row)| {
            row.iter().enumerate().all(|(l, &v)| v >= self.lo[i][l] - tol && v <= self.up[i][l] + tol)
                && row.windows(2).all(|w| w[1] >= w[0] - tol)
        })
    }

    /// Uniform random point of the box made row-monotone by a running maximum.
    pub fn random_state(&self, rng: &mut Stream) -> Vec<Vec<f64>> {
        (0..self.k())
            .map(|i| {
                let mut run = f64::NEG_INFINITY;
                (0..self.len())
                    .map(|l| {
                        let (a, b) = (self.lo[i][l], self.up[i][l]);
                        let v = if b > a { rng.random_range(a..=b) } else { a };
                        run = run.max(v);
                        run.clamp(a, b)
                    })
                    .collect()
            })
            .collect()
    }
}

/// State of one stage: the `k x ell` iterate and the left-boundary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointState {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

/// Counters from one application of the map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    /// Entries where some `U_{j,m} <= 0` forced the H floor.
    pub degeneracies: usize,
    pub h_clipped: usize,
    pub box_clipped: usize,
}

fn h_value(stage: &Stage, u: &[Vec<f64>], i: usize, m: usize, stats: &mut MapStats) -> f64 {
    let k = u.len();
    let (lo, hi) = (stage.h_lo[m], stage.h_hi[m]);
    if u.iter().any(|row| row[m] <= 0.0) {
        stats.degeneracies += 1;
        return lo;
    }
    let raw = if k == 2 {
        u[1 - i][m]
    } else {
        let kf = k as f64;
        let others: f64 = (0..k).filter(|&j| j != i).map(|j| u[j][m].ln()).sum();
        (others / (kf - 1.0) - (kf - 2.0) / (kf - 1.0) * u[i][m].ln()).exp()
    };
    if raw < lo || raw > hi {
        stats.h_clipped += 1;
    }
    raw.clamp(lo, hi)
}

/// One application of the stage map `phi`.
pub fn fixed_point_map(state: &FixedPointState, stage: &Stage) -> Result<(FixedPointState, MapStats)> {
    let k = stage.k();
    if state.u.len() != k || state.u.iter().any(|r| r.len() != stage.len()) || state.v.len() != k {
        return Err(Error::Validation(format!(
            "state shape does not match stage {} ({k} x {})",
            stage.tau + 1,
            stage.len()
        )));
    }
    if state.u.iter().flatten().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Domain("fixed-point state has negative or non-finite entries".into()));
    }
    let mut stats = MapStats::default();
    let mut out = vec![vec![0.0; stage.len()]; k];
    for i in 0..k {
        let mut cum = 0.0;
        for m in 0..stage.len() {
            let h = h_value(stage, &state.u, i, m, &mut stats);
            cum += stage.delta[i][m] / (1.0 - h);
            let raw = cum + state.v[i];
            let (a, b) = (stage.lo[i][m], stage.up[i][m]);
            if raw < a || raw > b {
                stats.box_clipped += 1;
            }
            out[i][m] = raw.clamp(a, b);
        }
    }
    Ok((FixedPointState { u: out, v: state.v.clone() }, stats))
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest `|phi(U) - phi(U')| / |U - U'|` over random pairs in the stage box.
pub fn measure_contraction(stage: &Stage, v: &[f64], pairs: usize, rng: &mut Stream) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = FixedPointState { u: stage.random_state(rng), v: v.to_vec() };
        let b = FixedPointState { u: stage.random_state(rng), v: v.to_vec() };
        let denom = sup_diff(&a.u, &b.u);
        if denom <= 0.0 {
            continue;
        }
        let (fa, _) = fixed_point_map(&a, stage)?;
        let (fb, _) = fixed_point_map(&b, stage)?;
        worst = worst.max(sup_diff(&fa.u, &fb.u) / denom);
    }
    Ok(worst)
}

/// Finite-difference estimate of the max row sum of the Jacobian of `phi` at `state`.
pub fn jacobian_norm_fd(state: &FixedPointState, stage: &Stage, step: f64) -> Result<f64> {
    let (base, _) = fixed_point_map(state, stage)?;
    let (k, ell) = (stage.k(), stage.len());
    let mut rows = vec![vec![0.0; ell]; k];
    for j in 0..k {
        for m in 0..ell {
            let mut probe = state.clone();
            probe.u[j][m] += step;
            let (out, _) = fixed_point_map(&probe, stage)?;
            for i in 0..k {
                for l in 0..ell {
                    rows[i][l] += ((out.u[i][l] - base.u[i][l]) / step).abs();
                }
            }
        }
    }
    Ok(rows.iter().flatten().fold(0.0f64, |a, &b| a.max(b)))
}

/// Summary of one macro-interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub tau: usize,
    pub start: f64,
    pub end: f64,
    pub micro_points: usize,
    pub gamma: f64,
    /// `|U_{t+1} - U_t| / |U_t - U_{t-1}|` for successive iterates.
    pub iterate_ratios: Vec<f64>,
    /// `|U_L - U_{L-1}|`.
    pub last_step: f64,
    /// Largest ratio over random pairs in the box.
    pub pair_contraction: f64,
    pub box_violations: usize,
    pub stats: MapStats,
}

/// Output of the staged iteration: `u_tilde[i][m]` estimates `U_i(points[m])`,
/// with `points[0] = nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRun {
    pub points: Vec<f64>,
    pub u_tilde: Vec<Vec<f64>>,
    pub stages: Vec<StageReport>,
}

/// Runs `fp_iters` map applications on each macro-interval in order,
/// starting from `V = G_i(nu)` and the coarse initialization.
pub fn run_fixed_point(grid: &SpGrid, inputs: &SpInputs, params: &SpParams, seed: u64) -> Result<FixedPointRun> {
    let k = inputs.k();
    let mut v: Vec<f64> = inputs.g.iter().map(|g| g(grid.nu)).collect();
    let mut points = vec![grid.nu];
    let mut u_tilde: Vec<Vec<f64>> = v.iter().map(|&x| vec![x]).collect();
    let mut stages = Vec::with_capacity(grid.t());
    let tree = SeedTree::new(seed);
    for tau in 0..grid.t() {
        let stage = Stage::new(grid, tau, inputs, params);
        let init: Vec<Vec<f64>> = (0..k)
            .map(|i| stage.xs.iter().enumerate().map(|(l, &x)| (inputs.coarse[i])(x).clamp(stage.lo[i][l], stage.up[i][l])).collect())
            .collect();
        let mut state = FixedPointState { u: init, v: v.clone() };
        let mut stats = MapStats::default();
        let mut ratios = Vec::new();
        let mut prev_step = f64::NAN;
        let mut last_step = 0.0;
        let mut violations = 0;
        for it in 0..params.fp_iters {
            let (next, s) = fixed_point_map(&state, &stage).map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("macro-interval {}, iteration {}: {m}", tau + 1, it + 1)),
                other => other,
            })?;
            stats.degeneracies += s.degeneracies;
            stats.h_clipped += s.h_clipped;
            stats.box_clipped += s.box_clipped;
            if !stage.contains(&next.u) {
                violations += 1;
            }
            let step = sup_diff(&next.u, &state.u);
            if prev_step > 0.0 {
                ratios.push(step / prev_step);
            }
            prev_step = step;
            last_step = step;
            state = next;
        }
        let pair_contraction = if params.contraction_pairs > 0 {
            measure_contraction(&stage, &v, params.contraction_pairs, &mut tree.stream(tau as u64))?
        } else {
            0.0
        };
        for i in 0..k {
            u_tilde[i].extend_from_slice(&state.u[i]);
            v[i] = *state.u[i].last().expect("nonempty stage");
        }
        points.extend_from_slice(&stage.xs);
        stages.push(StageReport {
            tau: tau + 1,
            start: grid.starts[tau],
            end: grid.end(tau),
            micro_points: stage.len(),
            gamma: grid.gammas[tau],
            iterate_ratios: ratios,
            last_step,
            pair_contraction,
            box_violations: violations,
            stats,
        });
    }
    Ok(FixedPointRun { points, u_tilde, stages })
}

/// Monotone repair applied during recovery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairStats {
    pub changed: usize,
    pub max_adjustment: f64,
    /// `int |repaired - raw| dx`.
    pub integrated: f64,
}

/// `F_i = prod_{j != i} U_j^{1/(k-1)} / U_i^{(k-2)/(k-1)}` at the grid points,
/// nearest-grid-point staircase on `(theta, 1 - theta)`, 0 below and 1 above.
pub fn recover_f(run: &FixedPointRun, theta: f64) -> Result<(Vec<PiecewiseCdf>, Vec<RepairStats>)> {
    let k = run.u_tilde.len();
    let kf = k as f64;
    let pts = &run.points;
    let mut cdfs = Vec::with_capacity(k);
    let mut reps = Vec::with_capacity(k);
    let (lo, hi) = (theta, 1.0 - theta);
    // Cells of the nearest-point staircase clipped to [lo, hi].
    let mut cells: Vec<(f64, f64, usize)> = Vec::new();
    for m in 0..pts.len() {
        let left = if m == 0 { f64::NEG_INFINITY } else { 0.5 * (pts[m - 1] + pts[m]) };
        let right = if m + 1 == pts.len() { f64::INFINITY } else { 0.5 * (pts[m] + pts[m + 1]) };
        let (a, b) = (left.max(lo), right.min(hi));
        if b > a {
            cells.push((a, b, m));
        }
    }
    for i in 0..k {
        let raw: Vec<f64> = cells
            .iter()
            .map(|&(_, _, m)| {
                let ui = run.u_tilde[i][m];
                let v = if k == 2 {
                    run.u_tilde[1 - i][m]
                } else {
                    let others: f64 = (0..k).filter(|&j| j != i).map(|j| run.u_tilde[j][m].ln()).sum();
                    (others / (kf - 1.0) - (kf - 2.0) / (kf - 1.0) * ui.ln()).exp()
                };
                if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }
            })
            .collect();
        let widths: Vec<f64> = cells.iter().map(|&(a, b, _)| b - a).collect();
        let fixed = pava(&raw, Some(&widths));
        let mut rs = RepairStats::default();
        for ((r, f), w) in raw.iter().zip(&fixed).zip(&widths) {
            let d = (r - f).abs();
            if d > 0.0 {
                rs.changed += 1;
                rs.max_adjustment = rs.max_adjustment.max(d);
                rs.integrated += d * w;
            }
        }
        let mut bps: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let mut vals = fixed;
        bps.push(hi);
        vals.push(1.0);
        cdfs.push(PiecewiseCdf::new(bps, vals, Interpolation::Step, true)?);
        reps.push(rs);
    }
    Ok((cdfs, reps))
}

/// Diagnostics of a full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpDiagnostics {
    pub params: SpParams,
    pub n: Option<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    pub macro_endpoints: Vec<f64>,
    pub gamma_per_interval: Vec<f64>,
    pub total_micro_points: usize,
    pub stall: Option<GridStall>,
    /// Largest random-pair contraction ratio per macro-interval.
    pub contraction_samples: Vec<f64>,
    /// Largest successive-iterate ratio per macro-interval.
    pub iterate_contraction: Vec<f64>,
    pub clip_rates: ClipRates,
    pub s_box_violations: usize,
    pub isotonic_repair_total: f64,
    pub isotonic_repair_max: f64,
    pub isotonic_repairs: Vec<RepairStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipRates {
    pub h_clip: f64,
    pub box_clip: f64,
    pub degeneracies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpEstimate {
    pub cdfs: Vec<PiecewiseCdf>,
    pub u_tilde: FixedPointRun,
    pub diagnostics: SpDiagnostics,
}

/// Grid, staged iteration and recovery on given inputs.
pub fn estimate_sp_from_inputs(inputs: &SpInputs, params: &SpParams, seed: u64) -> Result<SpEstimate> {
    let params = params.validated()?;
    let grid = build_macro_intervals(inputs, &params)?;
    let run = run_fixed_point(&grid, inputs, &params, seed)?;
    let (cdfs, reps) = recover_f(&run, params.theta)?;
    let evals: usize = grid.total_micro_points() * inputs.k() * params.fp_iters as usize;
    let sum = run.stages.iter().fold(MapStats::default(), |a, s| MapStats {
        degeneracies: a.degeneracies + s.stats.degeneracies,
        h_clipped: a.h_clipped + s.stats.h_clipped,
        box_clipped: a.box_clipped + s.stats.box_clipped,
    });
    let rate = |c: usize| if evals == 0 { 0.0 } else { c as f64 / evals as f64 };
    let diagnostics = SpDiagnostics {
        params,
        n: None,
        t: grid.t(),
        macro_endpoints: grid.endpoints(),
        gamma_per_interval: grid.gammas.clone(),
        total_micro_points: grid.total_micro_points(),
        stall: grid.stall,
        contraction_samples: run.stages.iter().map(|s| s.pair_contraction).collect(),
        iterate_contraction: run.stages.iter().map(|s| s.iterate_ratios.iter().fold(0.0f64, |a, &b| a.max(b))).collect(),
        clip_rates: ClipRates { h_clip: rate(sum.h_clipped), box_clip: rate(sum.box_clipped), degeneracies: sum.degeneracies },
        s_box_violations: run.stages.iter().map(|s| s.box_violations).sum(),
        isotonic_repair_total: reps.iter().map(|r| r.integrated).fold(0.0, f64::max),
        isotonic_repair_max: reps.iter().map(|r| r.max_adjustment).fold(0.0, f64::max),
        isotonic_repairs: reps,
    };
    Ok(SpEstimate { cdfs, u_tilde: run, diagnostics })
}

/// End-to-end estimator from second-price observations.
pub fn estimate_sp(samples: &SpSampleSet, alpha: f64, eta: f64, eps: f64, overrides: &SpOverrides, seed: u64) -> Result<SpEstimate> {
    let params = SpParams::desk(alpha, eta, eps, samples.len() as u64)?.with_overrides(overrides)?;
    let inputs = SpInputs::from_samples(samples, params.theta)?;
    let mut est = estimate_sp_from_inputs(&inputs, &params, seed)?;
    est.diagnostics.n = Some(samples.len());
    Ok(est)
}

/// Population inputs for independent bidders with closed-form bid CDFs and
/// densities: `G_i(x) = int_0^x (1 - F_i) dU_i` and `U_i(x) = int_0^x dG_i / (1 - z)`,
/// tabulated on `cells` cells.
pub fn population_inputs(
    cdfs: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    densities: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    cells: usize,
) -> Result<SpInputs> {
    let k = cdfs.len();
    if k < 2 || densities.len() != k {
        return Err(Error::Validation("need k >= 2 CDFs with matching densities".into()));
    }
    let xs: Vec<f64> = (0..=cells).map(|j| j as f64 / cells as f64).collect();
    // g_i(z) = (1 - F_i(z)) sum_{j != i} f_j(z) prod_{l != i,j} F_l(z).
    let gdens = |i: usize, z: f64| -> f64 {
        let mut s = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            let prod: f64 = (0..k).filter(|&l| l != i && l != j).map(|l| cdfs[l](z)).product();
            s += densities[j](z) * prod;
        }
        (1.0 - cdfs[i](z)) * s
    };
    let tables: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; xs.len()];
            let mut u = vec![0.0; xs.len()];
            for m in 1..xs.len() {
                let (a, b) = (xs[m - 1], xs[m]);
                let dg = crate::numeric::gauss_legendre(|z| gdens(i, z), a, b, 1);
                let du = if b < 1.0 {
                    crate::numeric::gauss_legendre(|z| gdens(i, z) / (1.0 - z), a, b, 1)
                } else {
                    0.0
                };
                g[m] = g[m - 1] + dg;
                u[m] = u[m - 1] + du;
            }
            (g, u)
        })
        .collect();
    let interp = move |xs: Vec<f64>, ys: Vec<f64>| -> MonotoneFn {
        Box::new(move |x: f64| {
            let x = x.clamp(0.0, 1.0);
            let j = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
            let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
            ys[j - 1] + t * (ys[j] - ys[j - 1])
        })
    };
    let mut g = Vec::with_capacity(k);
    let mut coarse = Vec::with_capacity(k);
    for (gt, ut) in tables {
        g.push(interp(xs.clone(), gt));
        coarse.push(interp(xs.clone(), ut));
    }
    SpInputs::population(g, coarse)
}
