//! Second-price estimation when the observer sets a reserve `x` and learns
//! the winner plus whether the reserve set the price.
//!
//! "Bidder j won with the reserve setting the price" and "nobody beat the
//! reserve" are disjoint, and together they mean every other bidder is
//! below `x`. Their frequency estimates `prod_{l != j} F_l(x)`, and the
//! product of all k of them gives each `F_j(x)` back.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{Interpolation, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::fp_partial::binary_search_level;
use crate::numeric::chernoff_samples;
use crate::rng::{SeedTree, Stream};
use crate::sim::{PartialWinner, SpReserveOracle};

/// Frequencies and estimates from one batch at reserve `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseEstimate {
    pub x: f64,
    pub n: u64,
    /// Frequency of `{W = j, Q}` plus that of `{W = reserve, Q}`, per bidder.
    pub means: Vec<f64>,
    pub win_and_triggered: Vec<f64>,
    pub reserve_won: f64,
    pub f: Vec<f64>,
}

/// Runs `n` auctions at reserve `x` and returns the k pointwise CDF estimates.
pub fn sp_partial_pointwise(oracle: &dyn SpReserveOracle, x: f64, n: u64, rng: &mut Stream) -> Result<PointwiseEstimate> {
    if n == 0 {
        return Err(Error::Parameter("pointwise batch needs n >= 1".into()));
    }
    let k = oracle.bidders();
    let mut wins = vec![0u64; k];
    let mut reserve = 0u64;
    for _ in 0..n {
        match oracle.query(x, rng) {
            (PartialWinner::Bidder(j), true) => wins[j] += 1,
            (PartialWinner::Reserve, true) => reserve += 1,
            // The reserve always sets the price when it wins.
            (PartialWinner::Reserve, false) => {
                return Err(Error::Estimator("oracle reported a reserve win without the reserve flag".into()))
            }
            (PartialWinner::Bidder(_), false) => {}
        }
    }
    let nf = n as f64;
    let counts: Vec<u64> = wins.iter().map(|w| w + reserve).collect();
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Estimator(format!(
            "no auction at reserve {x} left bidder {} alone above it; estimate undefined",
            j + 1
        )));
    }
    let means: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let kf = k as f64;
    let log_all: f64 = means.iter().map(|m| m.ln()).sum::<f64>() / (kf - 1.0);
    let f = means.iter().map(|m| (log_all - m.ln()).exp()).collect();
    Ok(PointwiseEstimate {
        x,
        n,
        means,
        win_and_triggered: wins.iter().map(|&w| w as f64 / nf).collect(),
        reserve_won: reserve as f64 / nf,
        f,
    })
}

/// Relative accuracy of each pointwise batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpPartialAccuracy {
    /// `rho = eps / 4`.
    Desk,
    /// `rho = eps (k-1) / (4 (2k-1))`, which carries the error through the k-fold product.
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpPartialParams {
    pub k: usize,
    pub p: f64,
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub accuracy: SpPartialAccuracy,
    pub max_calls: Option<u64>,
}

impl SpPartialParams {
    pub fn new(k: usize, p: f64, gamma: f64, eps: f64, delta: f64, lipschitz: f64) -> Result<Self> {
        Self { k, p, gamma, eps, delta, lipschitz, accuracy: SpPartialAccuracy::Desk, max_calls: None }.validated()
    }

    pub fn with_accuracy(self, accuracy: SpPartialAccuracy) -> Self {
        Self { accuracy, ..self }
    }

    pub fn with_max_calls(self, max_calls: u64) -> Self {
        Self { max_calls: Some(max_calls), ..self }
    }

    pub fn validated(self) -> Result<Self> {
        if self.k < 2 {
            return Err(Error::Parameter(format!("k must be >= 2, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Parameter(format!("p = {} outside [0,1)", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma = {} outside (0,1)", self.gamma)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter("eps must lie in (0,1] and delta in (0,1)".into()));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::Parameter(format!("lipschitz = {} must be positive", self.lipschitz)));
        }
        Ok(self)
    }

    /// `W = {gamma + a eps/2 < 1} ∪ {1}`.
    pub fn levels(&self) -> Vec<f64> {
        let mut w: Vec<f64> = (0..).map(|a| self.gamma + a as f64 * self.eps / 2.0).take_while(|&w| w < 1.0).collect();
        w.push(1.0);
        w
    }

    /// Bisection steps `ceil(log2(4L/eps)) + 1`.
    pub fn search_iterations(&self) -> u32 {
        (4.0 * self.lipschitz / self.eps).log2().ceil().max(0.0) as u32 + 1
    }

    pub fn rho(&self) -> f64 {
        let kf = self.k as f64;
        match self.accuracy {
            SpPartialAccuracy::Desk => self.eps / 4.0,
            SpPartialAccuracy::Theoretical => self.eps * (kf - 1.0) / (4.0 * (2.0 * kf - 1.0)),
        }
    }

    /// Number of pointwise batches across all searches.
    pub fn pointwise_calls(&self) -> u64 {
        (self.k * self.levels().len()) as u64 * self.search_iterations() as u64
    }

    /// Batch size: every mean is at least `gamma` on `[p, 1]`, union bound over all `k` means of all batches.
    pub fn batch_size(&self) -> u64 {
        let q = self.pointwise_calls() * self.k as u64;
        chernoff_samples(self.rho(), self.gamma, self.delta / q as f64)
    }

    pub fn planned_calls(&self) -> u64 {
        self.pointwise_calls().saturating_mul(self.batch_size())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpPartialDiagnostics {
    pub params: SpPartialParams,
    pub levels: Vec<f64>,
    pub batch_size: u64,
    pub search_iterations: u32,
    pub oracle_calls: u64,
    /// Located points `z[j][a]` after the running maximum.
    pub located: Vec<Vec<f64>>,
    /// Points raised by the running maximum, per bidder.
    pub monotone_fixes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpPartialEstimate {
    pub cdfs: Vec<PiecewiseCdf>,
    pub diagnostics: SpPartialDiagnostics,
}

/// Staircase `gamma` on `[p, z_0)` and `w_a` on `[z_a, z_{a+1})`, zero below `p`.
fn staircase(p: f64, gamma: f64, levels: &[f64], z: &[f64]) -> Result<PiecewiseCdf> {
    let mut bps = vec![p];
    let mut vals = vec![gamma];
    for (&w, &x) in levels.iter().zip(z) {
        let x = if w >= 1.0 { 1.0 } else { x };
        if x <= *bps.last().expect("nonempty") {
            *vals.last_mut().expect("nonempty") = w;
        } else {
            bps.push(x);
            vals.push(w);
        }
    }
    if p > 0.0 {
        bps.insert(0, 0.0);
        vals.insert(0, 0.0);
    }
    PiecewiseCdf::new(bps, vals, Interpolation::Step, true)
}

/// Binary searches for `F_j^{-1}(w_a)` on `[p, 1]` driven by pointwise batches.
pub fn sp_partial_estimate(oracle: &dyn SpReserveOracle, params: &SpPartialParams, seed: u64) -> Result<SpPartialEstimate> {
    let params = params.validated()?;
    if oracle.bidders() != params.k {
        return Err(Error::Validation(format!("oracle has {} bidders, parameters say {}", oracle.bidders(), params.k)));
    }
    let levels = params.levels();
    let iters = params.search_iterations();
    let n = params.batch_size();
    let planned = params.planned_calls();
    if let Some(cap) = params.max_calls {
        if planned > cap {
            return Err(Error::Budget {
                calls: 0,
                message: format!("plan needs {planned} oracle calls ({n} per batch), cap is {cap}"),
            });
        }
    }
    let tree = SeedTree::new(seed);
    let jobs: Vec<(usize, usize)> = (0..params.k).flat_map(|j| (0..levels.len()).map(move |a| (j, a))).collect();
    let found: Vec<f64> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(j, a))| {
            if levels[a] >= 1.0 {
                return Ok(1.0);
            }
            let mut rng = tree.child(j as u64).stream(idx as u64);
            let mut err = None;
            let z = binary_search_level(
                |x| match sp_partial_pointwise(oracle, x, n, &mut rng) {
                    Ok(e) => e.f[j],
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::INFINITY
                    }
                },
                levels[a],
                params.p,
                1.0,
                iters,
            );
            err.map_or(Ok(z), Err)
        })
        .collect::<Result<_>>()?;
    let mut located = Vec::with_capacity(params.k);
    let mut fixes = Vec::with_capacity(params.k);
    let mut cdfs = Vec::with_capacity(params.k);
    for j in 0..params.k {
        let mut z = found[j * levels.len()..(j + 1) * levels.len()].to_vec();
        let mut raised = 0;
        for a in 1..z.len() {
            if z[a] < z[a - 1] {
                z[a] = z[a - 1];
                raised += 1;
            }
        }
        cdfs.push(staircase(params.p, params.gamma, &levels, &z)?);
        located.push(z);
        fixes.push(raised);
    }
    let searched = jobs.iter().filter(|&&(_, a)| levels[a] < 1.0).count() as u64;
    let diagnostics = SpPartialDiagnostics {
        params,
        levels,
        batch_size: n,
        search_iterations: iters,
        oracle_calls: searched * iters as u64 * n,
        located,
        monotone_fixes: fixes,
    };
    Ok(SpPartialEstimate { cdfs, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sup_distance_to_fn;
    use crate::sim::AuctionModel;

    /// Returns the exact means as deterministic frequencies.
    struct Noiseless(usize);

    impl SpReserveOracle for Noiseless {
        fn bidders(&self) -> usize {
            self.0
        }
        fn query(&self, _r: f64, _rng: &mut Stream) -> (PartialWinner, bool) {
            unreachable!()
        }
    }

    #[test]
    fn pointwise_uniform() {
        let m = AuctionModel::uniform(2).unwrap();
        let e = sp_partial_pointwise(&m, 0.8, 100_000, &mut SeedTree::new(1).stream(0)).unwrap();
        assert!((e.f[0] - 0.8).abs() <= 0.03 && (e.f[1] - 0.8).abs() <= 0.03, "{:?}", e.f);
        for j in 0..2 {
            let count = |f: f64| (f * 100_000.0).round() as u64;
            assert_eq!(count(e.means[j]), count(e.win_and_triggered[j]) + count(e.reserve_won));
        }
    }

    #[test]
    fn pointwise_three_bidders() {
        let m = AuctionModel::uniform(3).unwrap();
        let e = sp_partial_pointwise(&m, 0.7, 200_000, &mut SeedTree::new(2).stream(0)).unwrap();
        for f in e.f {
            assert!((f - 0.7).abs() < 0.02);
        }
    }

    #[test]
    fn pointwise_at_top_and_bottom() {
        let m = AuctionModel::uniform(2).unwrap();
        let e = sp_partial_pointwise(&m, 1.0, 100, &mut SeedTree::new(1).stream(0)).unwrap();
        assert_eq!(e.f, vec![1.0, 1.0]);
        let z = sp_partial_pointwise(&m, 0.0, 100, &mut SeedTree::new(1).stream(0));
        assert!(matches!(z, Err(Error::Estimator(_))));
        assert!(sp_partial_pointwise(&Noiseless(2), 0.5, 0, &mut SeedTree::new(1).stream(0)).is_err());
    }

    #[test]
    fn levels_and_sizes() {
        let p = SpPartialParams::new(2, 0.5, 0.5, 0.1, 0.1, 1.0).unwrap();
        let w = p.levels();
        assert_eq!(w.len(), 11);
        assert!((w[0] - 0.5).abs() < 1e-12 && w[10] == 1.0);
        assert_eq!(p.search_iterations(), 7);
        let t = p.with_accuracy(SpPartialAccuracy::Theoretical);
        assert!(t.batch_size() > p.batch_size());
        assert!(SpPartialParams::new(1, 0.5, 0.5, 0.1, 0.1, 1.0).is_err());
    }

    #[test]
    fn staircase_shape() {
        let f = staircase(0.5, 0.5, &[0.5, 0.75, 1.0], &[0.5, 0.74, 0.99]).unwrap();
        assert_eq!((f.eval(0.4), f.eval(0.5), f.eval(0.8), f.eval(1.0)), (0.0, 0.5, 0.75, 1.0));
    }

    #[test]
    fn budget_cap_refuses_before_querying() {
        let p = SpPartialParams::new(2, 0.5, 0.5, 0.1, 0.1, 1.0).unwrap().with_max_calls(10);
        assert!(matches!(sp_partial_estimate(&Noiseless(2), &p, 0), Err(Error::Budget { calls: 0, .. })));
    }

    #[test]
    fn staircase_estimate_uniform() {
        let m = AuctionModel::uniform(2).unwrap();
        let p = SpPartialParams::new(2, 0.5, 0.5, 0.2, 0.1, 1.0).unwrap();
        let est = sp_partial_estimate(&m, &p, 3).unwrap();
        for f in &est.cdfs {
            assert!(sup_distance_to_fn(f, |x| x, 0.5, 1.0) <= 0.2);
        }
        assert_eq!(est.diagnostics.oracle_calls, 2 * 5 * est.diagnostics.search_iterations as u64 * est.diagnostics.batch_size);
    }
}
