//! Bayes-Nash equilibrium bidding in first-price auctions.
//!
//! The symmetric case has a closed form. The asymmetric case is solved for the
//! inverse bid functions `alpha_i` by shooting on the common top bid `eta`:
//! the system is integrated backward from `alpha_i(eta) = 1` and `eta` is
//! bisected until all `alpha_i` reach 0 together at `b = 0`.

use serde::{Deserialize, Serialize};

use crate::dist::{BoundedDensityModel, Distribution1D, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::numeric::gauss_legendre;

/// `beta(v) = v - int_0^v G^(k-1) / G(v)^(k-1)`; the fraction is taken as 0 when `G(v) = 0`.
pub fn symmetric_equilibrium_bid(value_cdf: &PiecewiseCdf, k: usize, v: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::Domain(format!("k must be >= 2, got {k}")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("value {v} outside [0,1]")));
    }
    let pow = (k - 1) as i32;
    let denom = value_cdf.eval(v).powi(pow);
    if denom <= 0.0 {
        return Ok(v);
    }
    let mut cuts = vec![0.0];
    cuts.extend(value_cdf.breakpoints().iter().copied().filter(|&b| b > 0.0 && b < v));
    cuts.push(v);
    let integral: f64 = cuts.windows(2).map(|w| gauss_legendre(|x| value_cdf.eval(x).powi(pow), w[0], w[1], 2)).sum();
    Ok((v - integral / denom).max(0.0))
}

/// Inverse bid functions on a uniform bid grid `0 = b_0 < ... < b_{N-1} = eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseBidProfile {
    pub grid: Vec<f64>,
    /// `alphas[i][m] = alpha_i(grid[m])`.
    pub alphas: Vec<Vec<f64>>,
    pub eta: f64,
    /// `max_i |alpha_i(0+)|` from linear extrapolation of the first two cells.
    pub boundary_defect: f64,
    /// Largest deviation from the log-derivative identity on `[0.1 eta, 0.9 eta]`.
    pub identity_residual: f64,
    pub bisection_steps: usize,
}

impl InverseBidProfile {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// `alpha_i(b)`, linear between grid points, 1 above `eta`.
    pub fn alpha(&self, i: usize, b: f64) -> f64 {
        if b >= self.eta {
            return 1.0;
        }
        if b <= 0.0 {
            return self.alphas[i][0];
        }
        let h = self.grid[1] - self.grid[0];
        let m = ((b / h) as usize).min(self.grid.len() - 2);
        let t = (b - self.grid[m]) / h;
        self.alphas[i][m] * (1.0 - t) + self.alphas[i][m + 1] * t
    }

    /// Equilibrium bid `beta_i(v)`, the inverse of `alpha_i`.
    pub fn bid(&self, i: usize, v: f64) -> f64 {
        let a = &self.alphas[i];
        if v <= a[0] {
            return 0.0;
        }
        if v >= 1.0 {
            return self.eta;
        }
        let m = a.partition_point(|&x| x <= v).clamp(1, a.len() - 1);
        let t = (v - a[m - 1]) / (a[m] - a[m - 1]);
        self.grid[m - 1] + t * (self.grid[m] - self.grid[m - 1])
    }

    /// Bid CDF `F_i(b) = G_i(alpha_i(b))` as a linear interpolant on the grid.
    pub fn bid_cdf(&self, i: usize, value_dist: &BoundedDensityModel) -> Result<PiecewiseCdf> {
        let mut bps = self.grid.clone();
        let mut vals: Vec<f64> = self.alphas[i].iter().map(|&a| value_dist.cdf(a)).collect();
        *vals.last_mut().expect("nonempty") = 1.0;
        if self.eta < 1.0 {
            bps.push(1.0);
            vals.push(1.0);
        }
        for j in 1..vals.len() {
            vals[j] = vals[j].max(vals[j - 1]);
        }
        PiecewiseCdf::linear(bps, vals)
    }
}

enum Shot {
    Crashed,
    Completed(Vec<Vec<f64>>),
}

fn rhs(dists: &[BoundedDensityModel], b: f64, alpha: &[f64], out: &mut [f64]) -> bool {
    let k = alpha.len();
    let kf = k as f64;
    let mut inv_sum = 0.0;
    for &a in alpha {
        let gap = a - b;
        if !(gap > 0.0) || !a.is_finite() {
            return false;
        }
        inv_sum += 1.0 / gap;
    }
    for i in 0..k {
        let gap = alpha[i] - b;
        let g = dists[i].density(alpha[i]);
        if !(g > 0.0) {
            return false;
        }
        let ratio = dists[i].cdf(alpha[i]) / g;
        let bracket = (inv_sum - 1.0 / gap) - (kf - 2.0) / gap;
        out[i] = ratio * bracket / (kf - 1.0);
    }
    true
}

fn shoot(dists: &[BoundedDensityModel], eta: f64, n: usize) -> Shot {
    let k = dists.len();
    let h = eta / (n - 1) as f64;
    let mut traj = vec![vec![0.0; n]; k];
    let mut a = vec![1.0; k];
    for row in traj.iter_mut() {
        row[n - 1] = 1.0;
    }
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for m in (1..n - 1).rev() {
        let b = (m + 1) as f64 * h;
        let step = -h;
        if !rhs(dists, b, &a, &mut k1) {
            return Shot::Crashed;
        }
        for i in 0..k {
            tmp[i] = a[i] + 0.5 * step * k1[i];
        }
        if !rhs(dists, b + 0.5 * step, &tmp, &mut k2) {
            return Shot::Crashed;
        }
        for i in 0..k {
            tmp[i] = a[i] + 0.5 * step * k2[i];
        }
        if !rhs(dists, b + 0.5 * step, &tmp, &mut k3) {
            return Shot::Crashed;
        }
        for i in 0..k {
            tmp[i] = a[i] + step * k3[i];
        }
        if !rhs(dists, b + step, &tmp, &mut k4) {
            return Shot::Crashed;
        }
        for i in 0..k {
            a[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !(a[i] > m as f64 * h) || !a[i].is_finite() {
                return Shot::Crashed;
            }
            traj[i][m] = a[i];
        }
    }
    Shot::Completed(traj)
}

fn extrapolate(traj: &[Vec<f64>]) -> Vec<f64> {
    traj.iter().map(|a| 2.0 * a[1] - a[2]).collect()
}

/// Shooting solver for the asymmetric equilibrium inverse bid functions.
///
/// `grid_size` is the number of bid grid points on `[0, eta]`; `tol` bounds the
/// boundary defect `max_i |alpha_i(0+)|`.
pub fn solve_asymmetric_equilibrium(
    value_dists: &[BoundedDensityModel],
    grid_size: usize,
    tol: f64,
) -> Result<InverseBidProfile> {
    let k = value_dists.len();
    if k < 2 {
        return Err(Error::Domain(format!("k must be >= 2, got {k}")));
    }
    if grid_size < 8 {
        return Err(Error::Parameter(format!("grid_size must be >= 8, got {grid_size}")));
    }
    if let Some(i) = value_dists.iter().position(|d| d.knots().iter().any(|&x| d.density(x) <= 0.0)) {
        return Err(Error::Domain(format!("value density of bidder {} is not bounded away from zero", i + 1)));
    }
    let too_high = |eta: f64| -> (bool, Option<Vec<Vec<f64>>>) {
        match shoot(value_dists, eta, grid_size) {
            Shot::Crashed => (true, None),
            Shot::Completed(t) => {
                let low = extrapolate(&t).into_iter().fold(f64::INFINITY, f64::min);
                (low < 0.0, Some(t))
            }
        }
    };
    let (mut lo, mut hi) = (1e-6, 1.0);
    let (lo_high, mut best) = too_high(lo);
    if lo_high || best.is_none() {
        return Err(Error::Convergence { message: "shooting failed even for a tiny top bid".into(), residual: f64::NAN });
    }
    let mut best_eta = lo;
    let mut steps = 0;
    while hi - lo > 1e-15 && steps < 200 {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let (high, traj) = too_high(mid);
        if high {
            hi = mid;
        } else {
            lo = mid;
            best_eta = mid;
            best = traj;
        }
    }
    let mut alphas = best.expect("lower end always completes");
    let ext = extrapolate(&alphas);
    let defect = ext.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    for (row, e) in alphas.iter_mut().zip(&ext) {
        row[0] = e.clamp(0.0, row[1]);
    }
    let h = best_eta / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|m| m as f64 * h).collect();
    let residual = identity_residual(value_dists, &grid, &alphas, best_eta);
    if defect > tol {
        return Err(Error::Convergence {
            message: format!("boundary defect {defect:.3e} exceeds tolerance {tol:.3e} at eta = {best_eta}"),
            residual: defect,
        });
    }
    Ok(InverseBidProfile { grid, alphas, eta: best_eta, boundary_defect: defect, identity_residual: residual, bisection_steps: steps })
}

/// `max |(alpha_i - b) sum_{j != i} d/db log G_j(alpha_j(b)) - 1|` over interior grid points,
/// with central differences for `alpha_j'`.
pub fn identity_residual(dists: &[BoundedDensityModel], grid: &[f64], alphas: &[Vec<f64>], eta: f64) -> f64 {
    let h = grid[1] - grid[0];
    let mut worst = 0.0f64;
    for m in 1..grid.len() - 1 {
        let b = grid[m];
        if b < 0.1 * eta || b > 0.9 * eta {
            continue;
        }
        for i in 0..alphas.len() {
            let mut s = 0.0;
            for (j, a) in alphas.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = (a[m + 1] - a[m - 1]) / (2.0 * h);
                s += dists[j].density(a[m]) * d / dists[j].cdf(a[m]);
            }
            worst = worst.max(((alphas[i][m] - b) * s - 1.0).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn best_response_grid(v: f64, k: usize, beta: impl Fn(f64) -> f64) -> f64 {
        // Opponents bid beta(V) with V uniform, so Pr(beta(V) <= b) = beta^{-1}(b).
        let inv = |b: f64| {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let m = 0.5 * (lo + hi);
                if beta(m) <= b {
                    lo = m
                } else {
                    hi = m
                }
            }
            lo
        };
        (0..=2000)
            .map(|j| j as f64 / 2000.0 * v)
            .max_by(|&a, &b| {
                let ua = (v - a) * inv(a).powi(k as i32 - 1);
                let ub = (v - b) * inv(b).powi(k as i32 - 1);
                ua.total_cmp(&ub)
            })
            .unwrap()
    }

    #[test]
    fn symmetric_closed_form() {
        let u = PiecewiseCdf::uniform();
        assert!((symmetric_equilibrium_bid(&u, 2, 0.8).unwrap() - 0.4).abs() < 1e-12);
        assert!((symmetric_equilibrium_bid(&u, 4, 1.0).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(symmetric_equilibrium_bid(&u, 3, 0.0).unwrap(), 0.0);
        let beta = |v: f64| symmetric_equilibrium_bid(&u, 2, v).unwrap();
        assert!((best_response_grid(0.8, 2, beta) - 0.4).abs() < 1e-3);
        let beta4 = |v: f64| symmetric_equilibrium_bid(&u, 4, v).unwrap();
        assert!((best_response_grid(1.0, 4, beta4) - 0.75).abs() < 1e-3);
    }

    #[test]
    fn symmetric_bid_is_increasing() {
        let g = PiecewiseCdf::linear(vec![0.0, 0.5, 1.0], vec![0.0, 0.2, 1.0]).unwrap();
        let bids: Vec<f64> = (0..=100).map(|j| symmetric_equilibrium_bid(&g, 3, j as f64 / 100.0).unwrap()).collect();
        assert!(bids.windows(2).all(|w| w[1] > w[0] || w[1] == 0.0));
        assert!(symmetric_equilibrium_bid(&g, 1, 0.5).is_err());
        assert!(symmetric_equilibrium_bid(&g, 2, 1.5).is_err());
    }

    #[test]
    fn symmetric_uniform_profiles() {
        for k in [2usize, 3] {
            let d = vec![BoundedDensityModel::uniform(); k];
            let p = solve_asymmetric_equilibrium(&d, 2001, 1e-3).unwrap();
            let slope = k as f64 / (k as f64 - 1.0);
            assert!((p.eta - 1.0 / slope).abs() < 1e-6, "eta {}", p.eta);
            for (m, &b) in p.grid.iter().enumerate().skip(1) {
                for a in &p.alphas {
                    assert!((a[m] - slope * b).abs() < 1e-3);
                }
            }
            assert!(p.identity_residual < 1e-6);
        }
    }

    #[test]
    fn asymmetric_profile_properties() {
        let tilted = BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.5], 0.5, 1.5, None).unwrap();
        let d = vec![BoundedDensityModel::uniform(), tilted.clone()];
        let p = solve_asymmetric_equilibrium(&d, 2001, 1e-2).unwrap();
        assert!(p.identity_residual <= 1e-2, "{}", p.identity_residual);
        for (i, a) in p.alphas.iter().enumerate() {
            assert!(a.windows(2).all(|w| w[1] > w[0]), "alpha_{i} not increasing");
            assert!(a.iter().zip(&p.grid).skip(1).all(|(x, b)| x > b));
        }
        let f = p.bid_cdf(1, &tilted).unwrap();
        assert_eq!(f.eval(p.eta), 1.0);
        assert!((p.alpha(0, p.bid(0, 0.6)) - 0.6).abs() < 1e-9);
    }
}
