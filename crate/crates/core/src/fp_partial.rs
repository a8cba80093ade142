//! First-price estimation when the observer plants a reserve bid `r` and
//! only learns who won.
//!
//! The planted bid wins with probability `H(r)`, and bidder `i` wins with
//! probability `H_i(1) - H_i(r)`. Binary searches over `r` locate quantile
//! grids of `H` and each `H_i`; the identification sum is then evaluated on
//! the union of the grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{Interpolation, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::isotonic::pava;
use crate::numeric::hoeffding_samples;
use crate::rng::SeedTree;
use crate::sim::{FpReserveOracle, PartialWinner};

/// Parameters of the reserve-price estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpPartialParams {
    pub k: usize,
    pub p: f64,
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
    /// Lipschitz constant of `H` and the `H_i`.
    pub lipschitz: f64,
    /// Spacing of the quantile levels.
    pub grid_spacing: f64,
    /// Target accuracy of each binary search, in quantile units.
    pub search_tol: f64,
    /// Accuracy of each frequency estimate.
    pub value_tol: f64,
    /// Hard cap on oracle calls.
    pub max_calls: Option<u64>,
}

impl FpPartialParams {
    /// Practical settings: spacing `eps/4`, search tolerance `eps/8`, value tolerance `eps/16`.
    pub fn desk(k: usize, p: f64, gamma: f64, eps: f64, delta: f64, lipschitz: f64) -> Result<Self> {
        Self {
            k,
            p,
            gamma,
            eps,
            delta,
            lipschitz,
            grid_spacing: eps / 4.0,
            search_tol: eps / 8.0,
            value_tol: eps / 16.0,
            max_calls: None,
        }
        .validated()
    }

    /// Settings from the accuracy proof: spacing `gamma^2 eps / 6`, search
    /// tolerance `gamma^2 eps / 24`, value tolerance `gamma eps^2 / (24 (k+1))`.
    /// These need on the order of 1e12 oracle calls at moderate `eps`.
    pub fn theoretical(k: usize, p: f64, gamma: f64, eps: f64, delta: f64, lipschitz: f64) -> Result<Self> {
        Self {
            k,
            p,
            gamma,
            eps,
            delta,
            lipschitz,
            grid_spacing: gamma * gamma * eps / 6.0,
            search_tol: gamma * gamma * eps / 24.0,
            value_tol: gamma * eps * eps / (24.0 * (k as f64 + 1.0)),
            max_calls: None,
        }
        .validated()
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
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma = {} outside (0,1]", self.gamma)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter("eps must lie in (0,1] and delta in (0,1)".into()));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::Parameter(format!("lipschitz = {} must be positive", self.lipschitz)));
        }
        for (name, v) in [("grid_spacing", self.grid_spacing), ("search_tol", self.search_tol), ("value_tol", self.value_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Parameter(format!("{name} = {v} outside (0,1)")));
            }
        }
        Ok(self)
    }

    /// Bisection steps `ceil(log2(2L / search_tol))`.
    pub fn search_iterations(&self) -> u32 {
        (2.0 * self.lipschitz / self.search_tol).log2().ceil().max(1.0) as u32
    }
}

/// Bisection for `f(x) ≈ u` on `[lo, hi]` with nondecreasing `f`; returns the final midpoint.
pub fn binary_search_level(mut f: impl FnMut(f64) -> f64, u: f64, mut lo: f64, mut hi: f64, iters: u32) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Frequencies from one batch of auctions at a fixed reserve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReserveBatch {
    pub r: f64,
    pub n: u64,
    /// Fraction of auctions won by the planted bid.
    pub planted: f64,
    /// Per-bidder win fractions.
    pub wins: Vec<f64>,
}

/// Runs `n` auctions at reserve `r` on one random stream.
pub fn reserve_batch(oracle: &dyn FpReserveOracle, r: f64, n: u64, tree: &SeedTree, index: u64) -> ReserveBatch {
    let mut rng = tree.stream(index);
    let k = oracle.bidders();
    let mut planted = 0u64;
    let mut wins = vec![0u64; k];
    for _ in 0..n {
        match oracle.query(r, &mut rng) {
            PartialWinner::Reserve => planted += 1,
            PartialWinner::Bidder(i) => wins[i] += 1,
        }
    }
    let nf = n as f64;
    ReserveBatch { r, n, planted: planted as f64 / nf, wins: wins.into_iter().map(|w| w as f64 / nf).collect() }
}

/// Run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpPartialDiagnostics {
    pub params: FpPartialParams,
    pub batch_size: u64,
    pub search_iterations: u32,
    pub oracle_calls: u64,
    pub levels_h: usize,
    pub levels_hi: Vec<usize>,
    pub grid_points: Vec<usize>,
    /// Entries moved by the monotone repair of each `H_i` along its grid.
    pub isotonic_repairs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpPartialEstimate {
    pub cdfs: Vec<PiecewiseCdf>,
    pub diagnostics: FpPartialDiagnostics,
}

fn levels(start: f64, spacing: f64, below: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = 0u64;
    loop {
        let u = start + j as f64 * spacing;
        if u >= below {
            break;
        }
        out.push(u);
        j += 1;
    }
    out
}

/// Reserve-price estimator of the bid CDFs on `[p, 1]`.
pub fn fp_partial_estimate(oracle: &dyn FpReserveOracle, params: &FpPartialParams, seed: u64) -> Result<FpPartialEstimate> {
    let params = params.validated()?;
    let k = params.k;
    if oracle.bidders() != k {
        return Err(Error::Validation(format!("oracle has {} bidders, parameters say {k}", oracle.bidders())));
    }
    let tree = SeedTree::new(seed);
    let t = params.search_iterations();

    // Batch count bound: searches over at most 1/spacing levels each for H and the H_i,
    // one evaluation per grid point, and the baseline.
    let per_fn = (1.0 / params.grid_spacing).ceil() as u64 + 1;
    let q_bound = (k as u64 + 1) * per_fn * (t as u64 + 1) + 3;
    let n = hoeffding_samples(params.value_tol, params.delta / q_bound as f64).max(1);

    let h_levels = levels(params.gamma, params.grid_spacing, 1.0);
    // The searches for H alone are known before any query is made.
    let check = |batches: u64| -> Result<()> {
        match params.max_calls {
            Some(max) if batches.saturating_mul(n) > max => Err(Error::Budget {
                calls: batches.saturating_mul(n),
                message: format!("{batches} batches of {n} auctions exceed the cap {max}"),
            }),
            _ => Ok(()),
        }
    };
    check(1 + h_levels.len() as u64 * t as u64)?;
    let baseline = reserve_batch(oracle, 0.0, n, &tree.child(0), 0);
    let hi_levels: Vec<Vec<f64>> =
        (0..k).map(|i| levels(params.grid_spacing, params.grid_spacing, baseline.wins[i])).collect();
    let searches = h_levels.len() + hi_levels.iter().map(Vec::len).sum::<usize>();
    check(1 + searches as u64 * t as u64)?;

    // (target function, level) pairs; target 0 is H, target i+1 is H_i.
    let jobs: Vec<(usize, f64)> = h_levels
        .iter()
        .map(|&u| (0, u))
        .chain(hi_levels.iter().enumerate().flat_map(|(i, ls)| ls.iter().map(move |&u| (i + 1, u))))
        .collect();
    let search_tree = tree.child(1);
    let found: Vec<f64> = jobs
        .par_iter()
        .enumerate()
        .map(|(s, &(target, u))| {
            let sub = search_tree.child(s as u64);
            let mut step = 0u64;
            binary_search_level(
                |x| {
                    let b = reserve_batch(oracle, x, n, &sub, step);
                    step += 1;
                    if target == 0 {
                        b.planted
                    } else {
                        baseline.wins[target - 1] - b.wins[target - 1]
                    }
                },
                u,
                params.p,
                1.0,
                t,
            )
        })
        .collect();
    let v_hat: Vec<f64> = jobs.iter().zip(&found).filter(|(j, _)| j.0 == 0).map(|(_, &x)| x).collect();

    // Shared evaluation points: every located quantile plus p and 1.
    let mut all_points: Vec<f64> = found.clone();
    all_points.extend([params.p, 1.0]);
    all_points.sort_by(f64::total_cmp);
    all_points.dedup();
    let eval_tree = tree.child(2);
    let evals: Vec<ReserveBatch> = all_points
        .par_iter()
        .enumerate()
        .map(|(j, &x)| reserve_batch(oracle, x, n, &eval_tree, j as u64))
        .collect();
    let lookup = |x: f64| &evals[all_points.partition_point(|&y| y < x)];
    let h_clip = params.gamma / 2.0;

    let mut cdfs = Vec::with_capacity(k);
    let mut grid_points = Vec::with_capacity(k);
    let mut repairs = Vec::with_capacity(k);
    for i in 0..k {
        let mut xs: Vec<f64> = v_hat.clone();
        xs.extend(jobs.iter().zip(&found).filter(|(j, _)| j.0 == i + 1).map(|(_, &x)| x));
        xs.extend([params.p, 1.0]);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let raw_hi: Vec<f64> = xs.iter().map(|&x| baseline.wins[i] - lookup(x).wins[i]).collect();
        let hi = pava(&raw_hi, None);
        repairs.push(raw_hi.iter().zip(&hi).filter(|(a, b)| a != b).count());
        let h: Vec<f64> = xs.iter().map(|&x| lookup(x).planted.max(h_clip)).collect();
        let m = xs.len();
        let mut g = vec![0.0; m];
        for s in (0..m - 1).rev() {
            g[s] = g[s + 1] + (hi[s + 1] - hi[s]) / h[s];
        }
        let vals: Vec<f64> = g.iter().map(|&v| (-v).exp().clamp(0.0, 1.0)).collect();
        grid_points.push(m);
        cdfs.push(PiecewiseCdf::new(xs, vals, Interpolation::Step, true)?);
    }
    let oracle_calls = (1 + found.len() as u64 * t as u64 + all_points.len() as u64) * n;
    Ok(FpPartialEstimate {
        cdfs,
        diagnostics: FpPartialDiagnostics {
            params,
            batch_size: n,
            search_iterations: t,
            oracle_calls,
            levels_h: h_levels.len(),
            levels_hi: hi_levels.iter().map(Vec::len).collect(),
            grid_points,
            isotonic_repairs: repairs,
        },
    })
}
