//! Convergence sweeps and lower-bound experiments.
//!
//! Every cell of a sweep draws its seed from `(seed_root, n, seed index)`,
//! so a report depends only on its config and never on scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{kolmogorov, kolmogorov_on, levy, wasserstein1, PiecewiseCdf};
use crate::error::{Error, Result};
use crate::fp::{estimate_bid_cdf_effective, estimate_bid_cdf_full, estimate_density, FpEstimatorConfig};
use crate::fp_partial::{fp_partial_estimate, FpPartialParams};
use crate::rng::SeedTree;
use crate::sim::{fixture_small_price_probability, lower_bound_fixture, simulate_fp, simulate_sp, AuctionModel};
use crate::sp::{estimate_sp, SpOverrides};
use crate::sp_partial::{sp_partial_estimate, SpPartialParams};
use crate::value::{estimate_value_cdf_effective, ValueEstimatorConfig};

const TRUTH_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    FpEffective,
    FpFull,
    FpDensity,
    FpValue,
    FpPartial,
    Sp,
    SpPartial,
}

impl EstimatorKind {
    /// Partial-observation kinds read each `n` as an oracle-call cap.
    pub fn is_partial(self) -> bool {
        matches!(self, EstimatorKind::FpPartial | EstimatorKind::SpPartial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "kolmogorov")]
    Kolmogorov,
    #[serde(rename = "levy")]
    Levy,
    #[serde(rename = "wasserstein1")]
    Wasserstein1,
    #[serde(rename = "L1-density", alias = "l1-density")]
    L1Density,
}

/// A model file path or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Inline(Box<AuctionModel>),
}

/// Estimator settings; each kind reads the fields it needs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Density bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sp: Option<SpOverrides>,
}

fn default_support() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelRef,
    pub estimator: EstimatorKind,
    pub n_schedule: Vec<u64>,
    pub seeds: u32,
    #[serde(default)]
    pub seed_root: u64,
    pub metric: MetricKind,
    #[serde(default = "default_support")]
    pub support: [f64; 2],
    #[serde(default)]
    pub params: EstimatorParams,
}

impl ExperimentConfig {
    pub fn validated(self) -> Result<Self> {
        if self.n_schedule.is_empty() || self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("n_schedule must be nonempty and strictly ascending".into()));
        }
        if self.n_schedule[0] == 0 {
            return Err(Error::Validation("n_schedule entries must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Validation("seeds must be >= 1".into()));
        }
        let [lo, hi] = self.support;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Validation(format!("support [{lo}, {hi}] is not a subinterval of [0,1]")));
        }
        if (self.metric == MetricKind::L1Density) != (self.estimator == EstimatorKind::FpDensity) {
            return Err(Error::Validation("the L1-density metric goes with the fp-density estimator and only with it".into()));
        }
        Ok(self)
    }

    /// Resolves the model; relative paths are taken from `base`.
    pub fn load_model(&self, base: &Path) -> Result<AuctionModel> {
        match &self.model {
            ModelRef::Inline(m) => Ok((**m).clone()),
            ModelRef::Path(p) => crate::io::read_model(&base.join(p)),
        }
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed_root: u64,
    pub code_version: String,
}

/// One `(n, seed, bidder)` cell value; `error` is `None` when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: u64,
    pub seed: u32,
    pub bidder: usize,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: u64,
    pub seed: u32,
    pub cell_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub diagnostics: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: u64,
    pub median: Option<f64>,
    pub p90: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub estimator: EstimatorKind,
    pub metric: MetricKind,
    pub k: usize,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// Rows as `n,seed,bidder,error` with 1-based bidders; failed cells leave `error` empty.
    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "seed", "bidder", "error"])?;
        for r in &self.rows {
            w.write_record([r.n.to_string(), r.seed.to_string(), r.bidder.to_string(), r.error.map_or(String::new(), |e| e.to_string())])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nearest-rank quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn need(v: Option<f64>, name: &str, kind: EstimatorKind) -> Result<f64> {
    v.ok_or_else(|| Error::Parameter(format!("estimator {kind:?} needs params.{name}")))
}

struct CellOutcome {
    errors: Vec<f64>,
    diagnostics: serde_json::Value,
}

fn metric_value(metric: MetricKind, est: &PiecewiseCdf, truth: &PiecewiseCdf, support: [f64; 2]) -> f64 {
    match metric {
        MetricKind::Kolmogorov if support == [0.0, 1.0] => kolmogorov(est, truth),
        MetricKind::Kolmogorov => kolmogorov_on(est, truth, support[0], support[1]),
        MetricKind::Levy => levy(est, truth),
        MetricKind::Wasserstein1 => wasserstein1(est, truth),
        MetricKind::L1Density => f64::NAN,
    }
}

fn run_cell(cfg: &ExperimentConfig, model: &AuctionModel, truths: &[PiecewiseCdf], n: u64, seed: u64) -> Result<CellOutcome> {
    let kind = cfg.estimator;
    let pr = &cfg.params;
    let delta = pr.delta.unwrap_or(0.05);
    let compare = |cdfs: &[PiecewiseCdf]| -> Vec<f64> {
        cdfs.iter().zip(truths).map(|(e, t)| metric_value(cfg.metric, e, t, cfg.support)).collect()
    };
    let out = match kind {
        EstimatorKind::FpEffective | EstimatorKind::FpDensity => {
            let samples = simulate_fp(model, n as usize, seed);
            let c = FpEstimatorConfig::new(need(pr.p, "p", kind)?, need(pr.gamma, "gamma", kind)?, need(pr.eps, "eps", kind)?, delta)?;
            let est = estimate_bid_cdf_effective(&samples, &c)?;
            let errors = if kind == EstimatorKind::FpDensity {
                let h = need(pr.h, "h", kind)?;
                let [lo, hi] = cfg.support;
                est.cdfs
                    .iter()
                    .zip(model.bid_dists())
                    .enumerate()
                    .map(|(i, (f, d))| {
                        let de = estimate_density(f, h, c.p)?;
                        if d.density(0.5).is_none() {
                            return Err(Error::Validation(format!("bidder {} has no density to compare against", i + 1)));
                        }
                        Ok(de.l1_error(|x| d.density(x).unwrap_or(0.0), lo, hi))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                compare(&est.cdfs)
            };
            CellOutcome { errors, diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
        EstimatorKind::FpFull => {
            let samples = simulate_fp(model, n as usize, seed);
            let est = estimate_bid_cdf_full(&samples, need(pr.lambda, "lambda", kind)?, need(pr.eps, "eps", kind)?, delta)?;
            CellOutcome { errors: compare(&est.cdfs), diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
        EstimatorKind::FpValue => {
            let samples = simulate_fp(model, n as usize, seed);
            let c = ValueEstimatorConfig {
                p: need(pr.p, "p", kind)?,
                gamma: need(pr.gamma, "gamma", kind)?,
                eps: need(pr.eps, "eps", kind)?,
                delta,
                zeta: need(pr.zeta, "zeta", kind)?,
                lipschitz: pr.lipschitz,
                d: pr.d,
            };
            let est = estimate_value_cdf_effective(&samples, &c)?;
            CellOutcome { errors: compare(&est.cdfs), diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
        EstimatorKind::FpPartial => {
            let p = FpPartialParams::desk(
                model.k(),
                need(pr.p, "p", kind)?,
                need(pr.gamma, "gamma", kind)?,
                need(pr.eps, "eps", kind)?,
                delta,
                need(pr.lipschitz, "lipschitz", kind)?,
            )?
            .with_max_calls(n);
            let est = fp_partial_estimate(model, &p, seed)?;
            CellOutcome { errors: compare(&est.cdfs), diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
        EstimatorKind::Sp => {
            let samples = simulate_sp(model, n as usize, seed);
            let o = pr.sp.unwrap_or_default();
            let est = estimate_sp(&samples, need(pr.alpha, "alpha", kind)?, need(pr.eta, "eta", kind)?, need(pr.eps, "eps", kind)?, &o, seed)?;
            CellOutcome { errors: compare(&est.cdfs), diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
        EstimatorKind::SpPartial => {
            let p = SpPartialParams::new(
                model.k(),
                need(pr.p, "p", kind)?,
                need(pr.gamma, "gamma", kind)?,
                need(pr.eps, "eps", kind)?,
                delta,
                need(pr.lipschitz, "lipschitz", kind)?,
            )?
            .with_max_calls(n);
            let est = sp_partial_estimate(model, &p, seed)?;
            CellOutcome { errors: compare(&est.cdfs), diagnostics: serde_json::to_value(&est.diagnostics)? }
        }
    };
    Ok(out)
}

/// Seed of the `(n, seed index)` cell under `root`.
pub fn cell_seed(root: u64, n: u64, seed: u32) -> u64 {
    SeedTree::new(root).child(n).child(seed as u64).root()
}

/// Simulate, estimate and score every `(n, seed)` cell. A failing cell is
/// recorded with its message and does not stop the others.
pub fn run_convergence(config: &ExperimentConfig, base: &Path) -> Result<ExperimentReport> {
    let cfg = config.clone().validated()?;
    let model = cfg.load_model(base)?;
    let k = model.k();
    let truths: Vec<PiecewiseCdf> = if cfg.estimator == EstimatorKind::FpValue {
        model
            .value_dists()
            .ok_or_else(|| Error::Validation("fp-value needs value_dists in the model".into()))?
            .iter()
            .map(|d| d.to_piecewise_cdf(TRUTH_CELLS))
            .collect()
    } else {
        model.bid_dists().iter().map(|d| d.to_piecewise()).collect()
    };
    let grid: Vec<(u64, u32)> = cfg.n_schedule.iter().flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s))).collect();
    let outcomes: Vec<(u64, u32, u64, Result<CellOutcome>)> = grid
        .par_iter()
        .map(|&(n, s)| {
            let seed = cell_seed(cfg.seed_root, n, s);
            (n, s, seed, run_cell(&cfg, &model, &truths, n, seed))
        })
        .collect();
    let mut rows = Vec::with_capacity(grid.len() * k);
    let mut cells = Vec::with_capacity(grid.len());
    for (n, seed, cs, out) in outcomes {
        match out {
            Ok(o) => {
                rows.extend(o.errors.iter().enumerate().map(|(i, &e)| ReportRow { n, seed, bidder: i + 1, error: Some(e) }));
                cells.push(CellReport { n, seed, cell_seed: cs, failure: None, diagnostics: o.diagnostics });
            }
            Err(e) => {
                rows.extend((0..k).map(|i| ReportRow { n, seed, bidder: i + 1, error: None }));
                cells.push(CellReport { n, seed, cell_seed: cs, failure: Some(e.to_string()), diagnostics: serde_json::Value::Null });
            }
        }
    }
    let aggregates = cfg
        .n_schedule
        .iter()
        .map(|&n| {
            let mut errs: Vec<f64> = rows.iter().filter(|r| r.n == n).filter_map(|r| r.error).collect();
            errs.sort_by(f64::total_cmp);
            Aggregate {
                n,
                median: quantile_sorted(&errs, 0.5),
                p90: quantile_sorted(&errs, 0.9),
                failures: cells.iter().filter(|c| c.n == n && c.failure.is_some()).count(),
            }
        })
        .collect();
    Ok(ExperimentReport {
        provenance: Provenance {
            config_hash: cfg.hash()?,
            seed_root: cfg.seed_root,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        estimator: cfg.estimator,
        metric: cfg.metric,
        k,
        rows,
        aggregates,
        cells,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value `sqrt(ln(2/level)/2) sqrt((n+m)/(nm))`.
pub fn ks_threshold(n: usize, m: usize, level: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ((2.0 / level).ln() / 2.0).sqrt() * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundTrial {
    /// Observations with `Y <= eps` under `D` and `D'`.
    pub small_d: u64,
    pub small_d_prime: u64,
    /// KS statistic between the `Y > eps` samples; `None` if either side is empty.
    pub ks: Option<f64>,
    pub ks_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub k: usize,
    pub eps: f64,
    pub lambda: f64,
    pub n: u64,
    pub trials: u32,
    pub seed_root: u64,
    pub kolmogorov_f1: f64,
    pub wasserstein1_f1: f64,
    /// `(lambda eps)^(k-1)`.
    pub small_price_scale: f64,
    /// Exact `Pr(Y <= eps)`.
    pub small_price_probability: f64,
    pub expected_small_count: f64,
    pub mean_small_count: f64,
    /// Standard deviation of the mean count over the trials.
    pub mean_small_count_sd: f64,
    pub mean_within_3_sd: bool,
    pub ks_level: f64,
    pub ks_below_threshold_fraction: f64,
    pub trial_results: Vec<LowerBoundTrial>,
}

/// Samples first-price logs from both hard instances and reports how little
/// separates them.
pub fn run_lower_bound_experiment(k: usize, eps: f64, lambda: f64, n: u64, trials: u32, seed_root: u64) -> Result<LowerBoundReport> {
    if trials == 0 || n == 0 {
        return Err(Error::Validation("lower-bound experiment needs n >= 1 and trials >= 1".into()));
    }
    let (d, dp) = lower_bound_fixture(k, eps, lambda)?;
    let f1 = d.bid_dists()[0].to_piecewise();
    let f1p = dp.bid_dists()[0].to_piecewise();
    let level = 0.05;
    let tree = SeedTree::new(seed_root);
    let results: Vec<LowerBoundTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let node = tree.child(t as u64);
            let a = simulate_fp(&d, n as usize, node.child(0).root());
            let b = simulate_fp(&dp, n as usize, node.child(1).root());
            let big = |ys: Vec<f64>| -> Vec<f64> { ys.into_iter().filter(|&y| y > eps).collect() };
            let (ya, yb) = (a.ys(), b.ys());
            let small_d = ya.iter().filter(|&&y| y <= eps).count() as u64;
            let small_d_prime = yb.iter().filter(|&&y| y <= eps).count() as u64;
            let (ba, bb) = (big(ya), big(yb));
            let (ks, thr) = if ba.is_empty() || bb.is_empty() {
                (None, None)
            } else {
                (Some(ks_two_sample(&ba, &bb)), Some(ks_threshold(ba.len(), bb.len(), level)))
            };
            LowerBoundTrial { small_d, small_d_prime, ks, ks_threshold: thr }
        })
        .collect();
    let prob = fixture_small_price_probability(k, eps, lambda);
    let nf = n as f64;
    // Both instances contribute one count per trial.
    let counts: Vec<f64> = results.iter().flat_map(|r| [r.small_d as f64, r.small_d_prime as f64]).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let sd = (nf * prob * (1.0 - prob) / counts.len() as f64).sqrt();
    let below = results.iter().filter(|r| matches!((r.ks, r.ks_threshold), (Some(s), Some(t)) if s <= t)).count();
    Ok(LowerBoundReport {
        k,
        eps,
        lambda,
        n,
        trials,
        seed_root,
        kolmogorov_f1: kolmogorov(&f1, &f1p),
        wasserstein1_f1: wasserstein1(&f1, &f1p),
        small_price_scale: (lambda * eps).powi(k as i32 - 1),
        small_price_probability: prob,
        expected_small_count: nf * prob,
        mean_small_count: mean,
        mean_small_count_sd: sd,
        mean_within_3_sd: (mean - nf * prob).abs() <= 3.0 * sd,
        ks_level: level,
        ks_below_threshold_fraction: below as f64 / trials as f64,
        trial_results: results,
    })
}
