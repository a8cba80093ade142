//! Value distribution recovery from first-price bids at equilibrium.
//!
//! For each bidder the opponents' product CDF is estimated through the
//! two-agent relabeling `(Y, Z) -> (Y, 1{Z = i})`. The bid a value `v` would
//! place is the maximizer of the empirical utility, and the value CDF is read
//! off as `G_i(v) = F_i(b(v))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{Interpolation, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::fp::{estimate_bid_cdf_effective, FpEstimatorConfig};
use crate::isotonic::repair_nondecreasing;
use crate::sim::FpSampleSet;

/// Resolution used when a linear CDF enters the best-response search.
const STEP_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimatorConfig {
    pub p: f64,
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
    /// Cap on the value densities.
    pub zeta: f64,
    /// Lipschitz constant of the bid CDFs; `None` selects the general case.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    /// Interior margin of the general case (defaults to `eps`).
    #[serde(default)]
    pub d: Option<f64>,
}

impl ValueEstimatorConfig {
    pub fn validated(self) -> Result<Self> {
        FpEstimatorConfig::new(self.p, self.gamma, self.eps, self.delta)?;
        if !(self.zeta > 0.0) {
            return Err(Error::Parameter(format!("zeta = {} must be positive", self.zeta)));
        }
        if self.lipschitz.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::Parameter("lipschitz must be positive".into()));
        }
        if self.d.is_some_and(|d| !(d > 0.0 && d < 1.0)) {
            return Err(Error::Parameter("margin d must lie in (0,1)".into()));
        }
        Ok(self)
    }

    /// Margin used in the general case.
    pub fn margin(&self) -> f64 {
        self.d.unwrap_or(self.eps)
    }

    /// Lipschitz constant used for calibration: the declared one, or `1/(d gamma)`
    /// in the general case.
    pub fn effective_lipschitz(&self) -> f64 {
        self.lipschitz.unwrap_or_else(|| 1.0 / (self.margin() * self.gamma))
    }

    /// `(eps0, eps1)` with `eps1 = eps / (2L)` and `eps0 = eps1^3 gamma^3 / (32 k^2 zeta^2)`.
    pub fn calibration(&self, k: usize) -> (f64, f64) {
        let eps1 = self.eps / (2.0 * self.effective_lipschitz());
        let kf = k as f64;
        let eps0 = eps1.powi(3) * self.gamma.powi(3) / (32.0 * kf * kf * self.zeta * self.zeta);
        (eps0, eps1)
    }
}

/// `(v - b) prod_{j != i} F_j(b)`.
pub fn empirical_utility(fhats: &[PiecewiseCdf], i: usize, v: f64, b: f64) -> f64 {
    let prod: f64 = fhats.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| f.eval(b)).product();
    (v - b) * prod
}

/// Exact maximizer of `(v - b) F(b)` over `[p, 1]` for a staircase `F`
/// (linear inputs are discretized first). Ties go to the smallest bid.
pub fn best_response_to(opponents: &PiecewiseCdf, v: f64, p: f64) -> f64 {
    let stepped;
    let f = if opponents.interpolation() == Interpolation::Step {
        opponents
    } else {
        stepped = opponents.to_step(STEP_CELLS).expect("discretizing a valid CDF");
        &stepped
    };
    let bps = f.breakpoints();
    let start = bps.partition_point(|&b| b <= p);
    let mut best_b = p;
    let mut best_u = (v - p) * f.eval(p);
    for (&b, &fv) in bps[start..].iter().zip(&f.values()[start..]) {
        if b >= v {
            break;
        }
        let u = (v - b) * fv;
        if u > best_u {
            best_u = u;
            best_b = b;
        }
    }
    best_b
}

/// Best response of bidder `i` given estimates of every bidder's bid CDF.
pub fn best_response(fhats: &[PiecewiseCdf], i: usize, v: f64, p: f64) -> Result<f64> {
    let stepped: Vec<PiecewiseCdf> =
        fhats.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| f.to_step(STEP_CELLS)).collect::<Result<_>>()?;
    let refs: Vec<&PiecewiseCdf> = stepped.iter().collect();
    Ok(best_response_to(&PiecewiseCdf::product(&refs)?, v, p))
}

/// `G(v) = F_i(b(v))` on the grid `p, p + s, ..., 1`, zero below `p`.
/// Returns the staircase and the isotonic repair applied to it.
pub fn compose_value_cdf(own: &PiecewiseCdf, opponents: &PiecewiseCdf, p: f64, spacing: f64) -> Result<(PiecewiseCdf, usize, f64)> {
    let mut vs: Vec<f64> = Vec::new();
    let mut m = 0u64;
    loop {
        let v = p + m as f64 * spacing;
        if v >= 1.0 - 1e-12 {
            break;
        }
        vs.push(v);
        m += 1;
    }
    vs.push(1.0);
    let raw: Vec<f64> = vs.iter().map(|&v| own.eval(best_response_to(opponents, v, p))).collect();
    let rep = repair_nondecreasing(&raw);
    let cdf = PiecewiseCdf::new(vs, rep.values, Interpolation::Step, false)?;
    Ok((cdf, rep.changed, rep.max_adjustment))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDiagnostics {
    pub bidder: usize,
    pub eps0_used: f64,
    pub eps1_used: f64,
    pub lipschitz_used: f64,
    pub grid_spacing: f64,
    pub isotonic_repairs: usize,
    pub max_repair: f64,
    /// Left end of the interval carrying the accuracy guarantee.
    pub guarantee_from: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub cdfs: Vec<PiecewiseCdf>,
    pub diagnostics: Vec<ValueDiagnostics>,
}

/// Effective-support value estimator.
pub fn estimate_value_cdf_effective(samples: &FpSampleSet, config: &ValueEstimatorConfig) -> Result<ValueEstimate> {
    let config = config.validated()?;
    let k = samples.k();
    let (eps0, eps1) = config.calibration(k);
    let spacing = (config.eps / 4.0).min(0.005);
    let fp_config = FpEstimatorConfig::new(config.p, config.gamma, eps0.max(f64::MIN_POSITIVE), config.delta)?;
    let parts: Vec<(PiecewiseCdf, ValueDiagnostics)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let two = samples.relabel_two_agent(i);
            let est = estimate_bid_cdf_effective(&two, &fp_config)?;
            let (cdf, repairs, max_repair) = compose_value_cdf(&est.cdfs[0], &est.cdfs[1], config.p, spacing)?;
            let diag = ValueDiagnostics {
                bidder: i + 1,
                eps0_used: eps0,
                eps1_used: eps1,
                lipschitz_used: config.effective_lipschitz(),
                grid_spacing: spacing,
                isotonic_repairs: repairs,
                max_repair,
                guarantee_from: if config.lipschitz.is_some() { config.p } else { config.p + config.margin() },
            };
            Ok((cdf, diag))
        })
        .collect::<Result<_>>()?;
    let (cdfs, diagnostics) = parts.into_iter().unzip();
    Ok(ValueEstimate { cdfs, diagnostics })
}

/// Effective-support settings used by the full-support value estimator.
///
/// Lipschitz case: `eta = eps/2`, `p = eta`, `gamma = (lambda eta)^k`.
/// General case: `p = 8 eta / 11`, `d = 3 eta / 11`, `gamma = (8 lambda eta / 11)^k`.
pub fn full_value_config(k: usize, lambda: f64, eps: f64, delta: f64, zeta: f64, lipschitz: Option<f64>) -> Result<ValueEstimatorConfig> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda = {lambda} must be positive")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Parameter(format!("eps = {eps} outside (0,1]")));
    }
    let eta = eps / 2.0;
    let (p, d, base) = match lipschitz {
        Some(_) => (eta, None, lambda * eta),
        None => (8.0 * eta / 11.0, Some(3.0 * eta / 11.0), 8.0 * lambda * eta / 11.0),
    };
    let gamma = base.powi(k as i32).min(1.0);
    if gamma < 1e-300 {
        return Err(Error::Parameter(format!(
            "gamma underflows for k = {k}; use a larger eps or fewer bidders"
        )));
    }
    ValueEstimatorConfig { p, gamma, eps, delta, zeta, lipschitz, d }.validated()
}

pub fn estimate_value_cdf_full(
    samples: &FpSampleSet,
    lambda: f64,
    eps: f64,
    delta: f64,
    zeta: f64,
    lipschitz: Option<f64>,
) -> Result<ValueEstimate> {
    let config = full_value_config(samples.k(), lambda, eps, delta, zeta, lipschitz)?;
    estimate_value_cdf_effective(samples, &config)
}

/// `max_x (|F(x + eps0) - F(x)| + 2 eps) / eps0` over `x in [0, 1 - eps0]`.
pub fn lipschitz_estimate(fhat: &PiecewiseCdf, eps0: f64, eps: f64) -> Result<f64> {
    if !(eps0 > 0.0 && eps0 <= 1.0) {
        return Err(Error::Parameter(format!("eps0 = {eps0} outside (0,1]")));
    }
    let top = 1.0 - eps0;
    let mut xs = vec![0.0, top];
    for &b in fhat.breakpoints() {
        xs.push(b);
        xs.push(b - eps0);
    }
    let best = xs
        .into_iter()
        .filter(|&x| (0.0..=top).contains(&x))
        .map(|x| (fhat.eval(x + eps0) - fhat.eval(x)).abs())
        .fold(0.0f64, f64::max);
    Ok((best + 2.0 * eps) / eps0)
}
