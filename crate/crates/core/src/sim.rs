//! Auction models, observation logs, and simulation of the four observation
//! models: full first-price, full second-price, and the two reserve-price
//! (partial observation) oracles.
//!
//! Bidder indices are 0-based in memory and 1-based in files.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{BoundedDensityModel, Distribution1D, Interpolation, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, Stream};

/// Resolution used when a density model has to be turned into a breakpoint CDF.
pub const DENSITY_CELLS: usize = 4096;

/// A bidder's bid distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BidDist {
    Cdf(PiecewiseCdf),
    Density(BoundedDensityModel),
}

impl BidDist {
    /// Breakpoint form (exact for `Cdf`, fine linear interpolant for `Density`).
    pub fn to_piecewise(&self) -> PiecewiseCdf {
        match self {
            BidDist::Cdf(c) => c.clone(),
            BidDist::Density(d) => d.to_piecewise_cdf(DENSITY_CELLS),
        }
    }

    /// Density where one exists (density models and linear CDFs).
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            BidDist::Density(d) => Some(d.density(x)),
            BidDist::Cdf(c) if c.interpolation() == Interpolation::Linear => {
                let b = c.breakpoints();
                let v = c.values();
                if x < b[0] || x > 1.0 {
                    return Some(0.0);
                }
                let j = b.partition_point(|&t| t <= x);
                if j == 0 || j == b.len() {
                    return Some(0.0);
                }
                Some((v[j] - v[j - 1]) / (b[j] - b[j - 1]))
            }
            BidDist::Cdf(_) => None,
        }
    }

    /// Density values at the knots (or piece slopes), used for bound checks.
    fn density_profile(&self) -> Option<Vec<f64>> {
        match self {
            BidDist::Density(d) => Some(d.knots().iter().map(|&x| d.density(x)).collect()),
            BidDist::Cdf(c) if c.interpolation() == Interpolation::Linear => {
                let b = c.breakpoints();
                let v = c.values();
                let mut out: Vec<f64> = b.windows(2).zip(v.windows(2)).map(|(b, v)| (v[1] - v[0]) / (b[1] - b[0])).collect();
                if b[0] > 0.0 || v[0] > 0.0 || *b.last().expect("nonempty") < 1.0 {
                    out.push(0.0);
                }
                Some(out)
            }
            BidDist::Cdf(_) => None,
        }
    }
}

impl Distribution1D for BidDist {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            BidDist::Cdf(c) => c.cdf(x),
            BidDist::Density(d) => d.cdf(x),
        }
    }

    fn quantile(&self, q: f64) -> f64 {
        match self {
            BidDist::Cdf(c) => c.quantile(q),
            BidDist::Density(d) => d.quantile(q),
        }
    }
}

/// Declared bounds attached to a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Growth constant: |F(x) - F(y)| >= lambda |x - y|.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Bid density lower bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Bid density upper bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Lipschitz constant of the bid CDFs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Value density cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

/// k independent bidders with their bid (and optionally value) distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct AuctionModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    bid_dists: Vec<BidDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value_dists: Option<Vec<BoundedDensityModel>>,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

#[derive(Deserialize)]
struct RawModel {
    #[serde(default)]
    id: Option<String>,
    bid_dists: Vec<BidDist>,
    #[serde(default)]
    value_dists: Option<Vec<BoundedDensityModel>>,
    #[serde(default)]
    metadata: ModelMetadata,
}

impl TryFrom<RawModel> for AuctionModel {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        AuctionModel::new(r.bid_dists, r.value_dists, r.metadata).map(|m| m.with_id(r.id))
    }
}

impl AuctionModel {
    pub fn new(
        bid_dists: Vec<BidDist>,
        value_dists: Option<Vec<BoundedDensityModel>>,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let k = bid_dists.len();
        if k < 2 {
            return Err(Error::Validation(format!("an auction needs k >= 2 bidders, got {k}")));
        }
        for (i, d) in bid_dists.iter().enumerate() {
            if let BidDist::Cdf(c) = d {
                if !c.is_full_cdf() {
                    return Err(Error::Validation(format!("bid distribution {} is not a full CDF", i + 1)));
                }
            }
            let profile = d.density_profile();
            let check = |name: &str, ok: &dyn Fn(f64) -> bool| -> Result<()> {
                match &profile {
                    Some(p) if p.iter().all(|&v| ok(v)) => Ok(()),
                    Some(_) => Err(Error::Validation(format!("bidder {}: declared {name} bound violated", i + 1))),
                    None => Err(Error::Validation(format!(
                        "bidder {}: declared {name} bound needs a density, got a staircase",
                        i + 1
                    ))),
                }
            };
            if let Some(a) = metadata.alpha {
                check("alpha", &|v| v >= a - 1e-9)?;
            }
            if let Some(e) = metadata.eta {
                check("eta", &|v| v <= e + 1e-9)?;
            }
            if let Some(l) = metadata.lipschitz {
                check("lipschitz", &|v| v <= l + 1e-9)?;
            }
        }
        if let (Some(a), Some(e)) = (metadata.alpha, metadata.eta) {
            if a > e {
                return Err(Error::Validation(format!("alpha {a} exceeds eta {e}")));
            }
        }
        if let Some(vd) = &value_dists {
            if vd.len() != k {
                return Err(Error::Validation(format!("{} value distributions for {k} bidders", vd.len())));
            }
            if let Some(z) = metadata.zeta {
                for (i, d) in vd.iter().enumerate() {
                    if d.knots().iter().any(|&x| d.density(x) > z + 1e-9) {
                        return Err(Error::Validation(format!("value density of bidder {} exceeds zeta", i + 1)));
                    }
                }
            }
        }
        Ok(Self { id: None, bid_dists, value_dists, metadata })
    }

    /// Model made of bid CDFs only.
    pub fn from_cdfs(cdfs: Vec<PiecewiseCdf>) -> Result<Self> {
        Self::new(cdfs.into_iter().map(BidDist::Cdf).collect(), None, ModelMetadata::default())
    }

    /// k independent uniform bidders.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_cdfs(vec![PiecewiseCdf::uniform(); k])
    }

    pub fn with_id(mut self, id: Option<String>) -> Self {
        self.id = id;
        self
    }

    pub fn with_metadata(self, metadata: ModelMetadata) -> Result<Self> {
        let id = self.id.clone();
        Ok(Self::new(self.bid_dists, self.value_dists, metadata)?.with_id(id))
    }

    pub fn k(&self) -> usize {
        self.bid_dists.len()
    }

    pub fn bid_dists(&self) -> &[BidDist] {
        &self.bid_dists
    }

    pub fn value_dists(&self) -> Option<&[BoundedDensityModel]> {
        self.value_dists.as_deref()
    }

    /// `prod_j F_j(x)`.
    pub fn h(&self, x: f64) -> f64 {
        self.bid_dists.iter().map(|d| d.cdf(x)).product()
    }

    fn draw(&self, rng: &mut Stream, out: &mut [f64]) {
        for (d, slot) in self.bid_dists.iter().zip(out.iter_mut()) {
            *slot = d.sample(rng);
        }
    }
}

/// First-price observation: winning bid and winner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpObservation {
    pub y: f64,
    pub winner: usize,
}

/// Second-price observation: second-highest bid and winner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpObservation {
    pub y: f64,
    pub winner: usize,
}

/// Winner of an auction with a planted reserve bid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartialWinner {
    Bidder(usize),
    Reserve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialFpObservation {
    pub r: f64,
    pub winner: PartialWinner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSpObservation {
    pub r: f64,
    pub winner: PartialWinner,
    pub q: bool,
}

macro_rules! sample_set {
    ($name:ident, $obs:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            k: usize,
            observations: Vec<$obs>,
            pub seed: Option<u64>,
            pub model_id: Option<String>,
        }

        impl $name {
            pub fn new(k: usize, observations: Vec<$obs>) -> Result<Self> {
                if k < 2 {
                    return Err(Error::Validation(format!("k must be >= 2, got {k}")));
                }
                for (j, o) in observations.iter().enumerate() {
                    if !(0.0..=1.0).contains(&o.y) {
                        return Err(Error::Validation(format!("observation {j}: y = {} outside [0,1]", o.y)));
                    }
                    if o.winner >= k {
                        return Err(Error::Validation(format!(
                            "observation {j}: winner {} outside 1..={k}",
                            o.winner + 1
                        )));
                    }
                }
                Ok(Self { k, observations, seed: None, model_id: None })
            }

            pub fn k(&self) -> usize {
                self.k
            }

            pub fn len(&self) -> usize {
                self.observations.len()
            }

            pub fn is_empty(&self) -> bool {
                self.observations.is_empty()
            }

            pub fn observations(&self) -> &[$obs] {
                &self.observations
            }

            pub fn ys(&self) -> Vec<f64> {
                self.observations.iter().map(|o| o.y).collect()
            }
        }
    };
}

sample_set!(FpSampleSet, FpObservation, "First-price observation log.");
sample_set!(SpSampleSet, SpObservation, "Second-price observation log.");

impl FpSampleSet {
    /// Two-agent relabeling `(Y, Z) -> (Y, 1{Z = i})`: agent 0 is bidder `i`,
    /// agent 1 stands for everyone else (CDF `prod_{j != i} F_j`).
    pub fn relabel_two_agent(&self, i: usize) -> FpSampleSet {
        let obs = self
            .observations
            .iter()
            .map(|o| FpObservation { y: o.y, winner: usize::from(o.winner != i) })
            .collect();
        FpSampleSet { k: 2, observations: obs, seed: self.seed, model_id: self.model_id.clone() }
    }
}

/// `n` i.i.d. first-price auctions; ties go to the lowest index.
pub fn simulate_fp(model: &AuctionModel, n: usize, seed: u64) -> FpSampleSet {
    let tree = SeedTree::new(seed);
    let k = model.k();
    let observations: Vec<FpObservation> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; k],
            |bids, j| {
                let mut rng = tree.stream(j as u64);
                model.draw(&mut rng, bids);
                let (mut winner, mut y) = (0, bids[0]);
                for (i, &b) in bids.iter().enumerate().skip(1) {
                    if b > y {
                        y = b;
                        winner = i;
                    }
                }
                FpObservation { y, winner }
            },
        )
        .collect();
    FpSampleSet { k, observations, seed: Some(seed), model_id: model.id.clone() }
}

/// `n` i.i.d. second-price auctions; `y` is the second-highest bid.
pub fn simulate_sp(model: &AuctionModel, n: usize, seed: u64) -> SpSampleSet {
    let tree = SeedTree::new(seed);
    let k = model.k();
    let observations: Vec<SpObservation> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; k],
            |bids, j| {
                let mut rng = tree.stream(j as u64);
                model.draw(&mut rng, bids);
                let (mut winner, mut top, mut second) = (0, bids[0], f64::NEG_INFINITY);
                for (i, &b) in bids.iter().enumerate().skip(1) {
                    if b > top {
                        second = top;
                        top = b;
                        winner = i;
                    } else if b > second {
                        second = b;
                    }
                }
                SpObservation { y: second, winner }
            },
        )
        .collect();
    SpSampleSet { k, observations, seed: Some(seed), model_id: model.id.clone() }
}

fn partial_round(model: &AuctionModel, r: f64, rng: &mut Stream) -> (PartialWinner, bool) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    let mut above = 0usize;
    for (i, d) in model.bid_dists.iter().enumerate() {
        let x = d.sample(rng);
        if x > best {
            best = x;
            arg = i;
        }
        if x > r {
            above += 1;
        }
    }
    let winner = if best <= r { PartialWinner::Reserve } else { PartialWinner::Bidder(arg) };
    // The reserve sets the price when at most one bidder exceeds it.
    (winner, above <= 1)
}

/// Winner of one auction with a planted bid `r`; the planted bid wins ties.
pub fn fp_partial_oracle(model: &AuctionModel, r: f64, rng: &mut Stream) -> PartialWinner {
    partial_round(model, r, rng).0
}

/// Winner and reserve-triggered flag of one second-price auction with reserve `r`.
pub fn sp_partial_oracle(model: &AuctionModel, r: f64, rng: &mut Stream) -> (PartialWinner, bool) {
    partial_round(model, r, rng)
}

/// Source of first-price reserve-price queries.
pub trait FpReserveOracle: Sync {
    fn bidders(&self) -> usize;
    fn query(&self, r: f64, rng: &mut Stream) -> PartialWinner;
}

/// Source of second-price reserve-price queries.
pub trait SpReserveOracle: Sync {
    fn bidders(&self) -> usize;
    fn query(&self, r: f64, rng: &mut Stream) -> (PartialWinner, bool);
}

impl FpReserveOracle for AuctionModel {
    fn bidders(&self) -> usize {
        self.k()
    }

    fn query(&self, r: f64, rng: &mut Stream) -> PartialWinner {
        fp_partial_oracle(self, r, rng)
    }
}

impl SpReserveOracle for AuctionModel {
    fn bidders(&self) -> usize {
        self.k()
    }

    fn query(&self, r: f64, rng: &mut Stream) -> (PartialWinner, bool) {
        sp_partial_oracle(self, r, rng)
    }
}

/// Partial first-price log at fixed reserves, one auction per reserve.
pub fn simulate_partial_fp(model: &AuctionModel, reserves: &[f64], seed: u64) -> Vec<PartialFpObservation> {
    let tree = SeedTree::new(seed);
    reserves
        .iter()
        .enumerate()
        .map(|(j, &r)| PartialFpObservation { r, winner: fp_partial_oracle(model, r, &mut tree.stream(j as u64)) })
        .collect()
}

/// Partial second-price log at fixed reserves.
pub fn simulate_partial_sp(model: &AuctionModel, reserves: &[f64], seed: u64) -> Vec<PartialSpObservation> {
    let tree = SeedTree::new(seed);
    reserves
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let (winner, q) = sp_partial_oracle(model, r, &mut tree.stream(j as u64));
            PartialSpObservation { r, winner, q }
        })
        .collect()
}

/// The two hard instances `(D, D')` of the sample-complexity lower bound.
///
/// Bidders `i > 1` draw from `lambda U[0,1] + (1-lambda) U[3/4,1]` in both.
/// Bidder 1 draws from `lambda U[0,1] + (1-lambda) U[0,eps/4]` in `D` and from
/// `lambda U[0,1] + (1-lambda) U[3eps/4,eps]` in `D'`.
pub fn lower_bound_fixture(k: usize, eps: f64, lambda: f64) -> Result<(AuctionModel, AuctionModel)> {
    if k < 2 {
        return Err(Error::Domain(format!("k must be >= 2, got {k}")));
    }
    if !(eps > 0.0 && eps < 0.5) || !(lambda > 0.0 && lambda < 0.5) {
        return Err(Error::Domain(format!("eps and lambda must lie in (0, 1/2), got {eps}, {lambda}")));
    }
    let other = PiecewiseCdf::linear(vec![0.0, 0.75, 1.0], vec![0.0, 0.75 * lambda, 1.0])?;
    let f1 = PiecewiseCdf::linear(vec![0.0, eps / 4.0, 1.0], vec![0.0, lambda * eps / 4.0 + 1.0 - lambda, 1.0])?;
    let f1p = PiecewiseCdf::linear(
        vec![0.0, 0.75 * eps, eps, 1.0],
        vec![0.0, 0.75 * lambda * eps, lambda * eps + 1.0 - lambda, 1.0],
    )?;
    let meta = ModelMetadata { lambda: Some(lambda), ..Default::default() };
    let build = |first: PiecewiseCdf, id: &str| -> Result<AuctionModel> {
        let mut dists = vec![BidDist::Cdf(first)];
        dists.extend((1..k).map(|_| BidDist::Cdf(other.clone())));
        Ok(AuctionModel::new(dists, None, meta.clone())?.with_id(Some(id.to_string())))
    };
    Ok((build(f1, "lower-bound-D")?, build(f1p, "lower-bound-D-prime")?))
}

/// Exact `Pr(Y <= eps)` under either fixture: `(lambda eps + 1 - lambda) (lambda eps)^(k-1)`.
pub fn fixture_small_price_probability(k: usize, eps: f64, lambda: f64) -> f64 {
    (lambda * eps + 1.0 - lambda) * (lambda * eps).powi(k as i32 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{dkw_band, kolmogorov, wasserstein1};

    #[test]
    fn fp_simulation_matches_product_cdf() {
        let m = AuctionModel::uniform(2).unwrap();
        let s = simulate_fp(&m, 100_000, 1);
        let ecdf = PiecewiseCdf::empirical(&s.ys()).unwrap();
        let truth = PiecewiseCdf::from_fn(|x| x * x, 4000, &[]).unwrap();
        assert!(kolmogorov(&ecdf, &truth) < dkw_band(100_000, 0.05).unwrap() + 1e-6);
        let ones = s.observations().iter().filter(|o| o.winner == 0).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.01);
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = AuctionModel::uniform(3).unwrap();
        assert_eq!(simulate_fp(&m, 500, 9), simulate_fp(&m, 500, 9));
        assert_ne!(simulate_fp(&m, 500, 9), simulate_fp(&m, 500, 10));
    }

    #[test]
    fn atoms_and_ties() {
        let m = AuctionModel::from_cdfs(vec![PiecewiseCdf::point_mass(1.0).unwrap(), PiecewiseCdf::uniform()]).unwrap();
        assert!(simulate_fp(&m, 1000, 2).observations().iter().all(|o| o.winner == 0 && o.y == 1.0));
        let tie = AuctionModel::from_cdfs(vec![PiecewiseCdf::point_mass(0.5).unwrap(); 3]).unwrap();
        assert!(simulate_fp(&tie, 10, 2).observations().iter().all(|o| o.winner == 0));
        let sp = simulate_sp(&tie, 10, 2);
        assert!(sp.observations().iter().all(|o| o.winner == 0 && o.y == 0.5));
        let m0 = AuctionModel::from_cdfs(vec![PiecewiseCdf::uniform(), PiecewiseCdf::point_mass(0.0).unwrap()]).unwrap();
        assert!(simulate_sp(&m0, 1000, 3).observations().iter().all(|o| o.winner == 0 && o.y == 0.0));
    }

    #[test]
    fn sp_simulation_moments() {
        let m = AuctionModel::uniform(2).unwrap();
        let s = simulate_sp(&m, 100_000, 4);
        let mean = s.ys().iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0 / 3.0).abs() < 0.01);
        let g1: Vec<f64> = s.observations().iter().filter(|o| o.winner == 0).map(|o| o.y).collect();
        let sub = crate::dist::SubCdf::empirical(&g1, s.len()).unwrap();
        let band = dkw_band(100_000, 0.05).unwrap();
        for j in 0..=20 {
            let x = j as f64 / 20.0;
            assert!((sub.eval(x) - (x - x * x / 2.0)).abs() < band);
        }
    }

    #[test]
    fn partial_oracles() {
        let m = AuctionModel::uniform(2).unwrap();
        let t = SeedTree::new(5);
        let mut rng = t.stream(0);
        assert!((0..1000).all(|_| fp_partial_oracle(&m, 1.0, &mut rng) == PartialWinner::Reserve));
        assert!((0..1000).all(|_| fp_partial_oracle(&m, 0.0, &mut rng) != PartialWinner::Reserve));
        assert!((0..1000).all(|_| !sp_partial_oracle(&m, 0.0, &mut rng).1));
        assert!((0..1000).all(|_| sp_partial_oracle(&m, 1.0, &mut rng) == (PartialWinner::Reserve, true)));
        let n = 100_000;
        let planted = (0..n).filter(|_| fp_partial_oracle(&m, 0.5, &mut rng) == PartialWinner::Reserve).count();
        assert!((planted as f64 / n as f64 - 0.25).abs() < 0.01);
        let x = 0.6;
        let z1 = (0..n)
            .filter(|_| {
                let (w, q) = sp_partial_oracle(&m, x, &mut rng);
                q && w != PartialWinner::Bidder(1)
            })
            .count();
        assert!((z1 as f64 / n as f64 - x).abs() < 0.01);
    }

    #[test]
    fn model_validation() {
        assert!(AuctionModel::uniform(1).is_err());
        let half = PiecewiseCdf::step(vec![0.5], vec![0.5]);
        assert!(half.is_ok());
        let sub = PiecewiseCdf::new(vec![0.5], vec![0.5], Interpolation::Step, false).unwrap();
        assert!(AuctionModel::from_cdfs(vec![sub, PiecewiseCdf::uniform()]).is_err());
        let meta = ModelMetadata { alpha: Some(0.5), eta: Some(2.0), ..Default::default() };
        assert!(AuctionModel::uniform(2).unwrap().with_metadata(meta.clone()).is_ok());
        let steep = PiecewiseCdf::linear(vec![0.0, 0.25, 1.0], vec![0.0, 0.75, 1.0]).unwrap();
        assert!(AuctionModel::from_cdfs(vec![steep, PiecewiseCdf::uniform()]).unwrap().with_metadata(meta).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let d = BoundedDensityModel::new(vec![0.0, 1.0], vec![0.5, 1.5], 0.5, 1.5, None).unwrap();
        let m = AuctionModel::new(
            vec![BidDist::Density(d), BidDist::Cdf(PiecewiseCdf::uniform())],
            None,
            ModelMetadata { alpha: Some(0.5), eta: Some(2.0), ..Default::default() },
        )
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: AuctionModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn fixture_distances() {
        for &(k, eps, lambda) in &[(2, 0.1, 0.2), (3, 0.3, 0.45), (5, 0.05, 0.01)] {
            let (d, dp) = lower_bound_fixture(k, eps, lambda).unwrap();
            let (f1, f1p) = (d.bid_dists()[0].to_piecewise(), dp.bid_dists()[0].to_piecewise());
            assert!(kolmogorov(&f1, &f1p) >= 0.5);
            assert!(wasserstein1(&f1, &f1p) >= eps / 4.0 * (1.0 - lambda));
            assert_eq!(d.bid_dists()[1], dp.bid_dists()[1]);
            let p = fixture_small_price_probability(k, eps, lambda);
            assert!((d.h(eps) - p).abs() < 1e-14 && (dp.h(eps) - p).abs() < 1e-14);
        }
        assert!(lower_bound_fixture(2, 0.6, 0.2).is_err());
        assert!(lower_bound_fixture(2, 0.1, 0.0).is_err());
    }

    #[test]
    fn fixture_small_price_frequency_within_band() {
        let (d, _) = lower_bound_fixture(2, 0.3, 0.4).unwrap();
        let n = 200_000;
        let s = simulate_fp(&d, n, 8);
        let freq = s.ys().iter().filter(|&&y| y <= 0.3).count() as f64 / n as f64;
        let p = fixture_small_price_probability(2, 0.3, 0.4);
        assert!((freq - p).abs() < dkw_band(n as u64, 0.05).unwrap(), "{freq} vs {p}");
    }
}
