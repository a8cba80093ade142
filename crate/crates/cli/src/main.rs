use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auctionmetrics::dist::{kolmogorov, levy, wasserstein1};
use auctionmetrics::fp::{estimate_bid_cdf_effective, estimate_bid_cdf_full, estimate_density, FpEstimatorConfig};
use auctionmetrics::fp_partial::{fp_partial_estimate, FpPartialParams};
use auctionmetrics::harness::{run_convergence, run_lower_bound_experiment, ExperimentConfig};
use auctionmetrics::io;
use auctionmetrics::sim::{simulate_fp, simulate_sp};
use auctionmetrics::sp::{estimate_sp, SpOverrides};
use auctionmetrics::sp_partial::{sp_partial_estimate, SpPartialParams};
use auctionmetrics::value::{estimate_value_cdf_effective, estimate_value_cdf_full, ValueEstimatorConfig};
use auctionmetrics::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "auctionmetrics", version, about = "Simulate auctions and estimate bid and value distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Fp,
    Sp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Effective,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Kolmogorov,
    Levy,
    Wasserstein1,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an observation log from a model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-price bid CDFs from a `y,z` log.
    EstimateFp {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum, default_value = "effective")]
        mode: Mode,
        #[arg(long, required_if_eq("mode", "effective"))]
        p: Option<f64>,
        #[arg(long, required_if_eq("mode", "effective"))]
        gamma: Option<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, required_if_eq("mode", "full"))]
        lambda: Option<f64>,
        /// Number of bidders (inferred from the log when absent).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-difference densities of estimated CDFs, tabulated on [p, 1].
    EstimateFpDensity {
        #[arg(long)]
        cdf: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-price bid CDFs by planting reserve bids in simulated auctions.
    EstimateFpPartial {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        lipschitz: f64,
        #[arg(long)]
        max_calls: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value CDFs from a first-price `y,z` log.
    EstimateValues {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum, default_value = "effective")]
        mode: Mode,
        #[arg(long, required_if_eq("mode", "effective"))]
        p: Option<f64>,
        #[arg(long, required_if_eq("mode", "effective"))]
        gamma: Option<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        zeta: f64,
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long)]
        d: Option<f64>,
        #[arg(long, required_if_eq("mode", "full"))]
        lambda: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Second-price bid CDFs from a `y,w` log.
    EstimateSp {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        micro_delta: Option<f64>,
        #[arg(long)]
        fp_iters: Option<u32>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Second-price bid CDFs by setting reserves in simulated auctions.
    EstimateSpPartial {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        lipschitz: f64,
        #[arg(long)]
        max_calls: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a convergence sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the error rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sample the two hard instances of the lower bound and compare them.
    LowerBound {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 50)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance between matching CDFs of two files.
    Metric {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum)]
        kind: Metric,
    },
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn bundle(cdfs: &[auctionmetrics::dist::PiecewiseCdf], diagnostics: serde_json::Value) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(io::CdfBundle { cdfs: cdfs.to_vec(), diagnostics })?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, format, n, seed, out } => {
            let m = io::read_model(&model)?;
            let mut buf = Vec::new();
            match format {
                Format::Fp => io::write_fp_samples_to(&mut buf, &simulate_fp(&m, n, seed))?,
                Format::Sp => io::write_sp_samples_to(&mut buf, &simulate_sp(&m, n, seed))?,
            }
            match out {
                Some(p) => std::fs::write(p, buf)?,
                None => std::io::stdout().lock().write_all(&buf)?,
            }
            Ok(())
        }
        Command::EstimateFp { samples, mode, p, gamma, eps, delta, lambda, k, out } => {
            let s = io::read_fp_samples(&samples, k)?;
            let est = match mode {
                Mode::Effective => {
                    let cfg = FpEstimatorConfig::new(p.unwrap_or_default(), gamma.unwrap_or_default(), eps, delta)?;
                    estimate_bid_cdf_effective(&s, &cfg)?
                }
                Mode::Full => estimate_bid_cdf_full(&s, lambda.unwrap_or_default(), eps, delta)?,
            };
            emit(out.as_deref(), &bundle(&est.cdfs, serde_json::to_value(&est.diagnostics)?)?)
        }
        Command::EstimateFpDensity { cdf, h, p, points, out } => {
            let cdfs = io::read_cdfs(&cdf)?;
            let grid: Vec<f64> = (0..=points.max(1)).map(|j| p + (1.0 - p) * j as f64 / points.max(1) as f64).collect();
            let dens = cdfs
                .iter()
                .map(|f| {
                    let d = estimate_density(f, h, p)?;
                    Ok(grid.iter().map(|&x| d.eval(x)).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            emit(out.as_deref(), &json!({ "h": h, "p": p, "x": grid, "densities": dens }))
        }
        Command::EstimateFpPartial { model, p, gamma, eps, delta, lipschitz, max_calls, seed, out } => {
            let m = io::read_model(&model)?;
            let mut params = FpPartialParams::desk(m.k(), p, gamma, eps, delta, lipschitz)?;
            if let Some(c) = max_calls {
                params = params.with_max_calls(c);
            }
            let est = fp_partial_estimate(&m, &params, seed)?;
            emit(out.as_deref(), &bundle(&est.cdfs, serde_json::to_value(&est.diagnostics)?)?)
        }
        Command::EstimateValues { samples, mode, p, gamma, eps, delta, zeta, lipschitz, d, lambda, k, out } => {
            let s = io::read_fp_samples(&samples, k)?;
            let est = match mode {
                Mode::Effective => {
                    let cfg = ValueEstimatorConfig {
                        p: p.unwrap_or_default(),
                        gamma: gamma.unwrap_or_default(),
                        eps,
                        delta,
                        zeta,
                        lipschitz,
                        d,
                    };
                    estimate_value_cdf_effective(&s, &cfg)?
                }
                Mode::Full => estimate_value_cdf_full(&s, lambda.unwrap_or_default(), eps, delta, zeta, lipschitz)?,
            };
            emit(out.as_deref(), &bundle(&est.cdfs, serde_json::to_value(&est.diagnostics)?)?)
        }
        Command::EstimateSp { samples, alpha, eta, eps, nu, theta, micro_delta, fp_iters, k, seed, out } => {
            let s = io::read_sp_samples(&samples, k)?;
            let o = SpOverrides { nu, theta, micro_delta, fp_iters, ..Default::default() };
            let est = estimate_sp(&s, alpha, eta, eps, &o, seed)?;
            emit(out.as_deref(), &bundle(&est.cdfs, serde_json::to_value(&est.diagnostics)?)?)
        }
        Command::EstimateSpPartial { model, p, gamma, eps, delta, lipschitz, max_calls, seed, out } => {
            let m = io::read_model(&model)?;
            let mut params = SpPartialParams::new(m.k(), p, gamma, eps, delta, lipschitz)?;
            if let Some(c) = max_calls {
                params = params.with_max_calls(c);
            }
            let est = sp_partial_estimate(&m, &params, seed)?;
            emit(out.as_deref(), &bundle(&est.cdfs, serde_json::to_value(&est.diagnostics)?)?)
        }
        Command::Sweep { config, out, csv } => {
            let cfg: ExperimentConfig = io::read_json(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let report = run_convergence(&cfg, base)?;
            if let Some(p) = csv {
                report.write_rows_csv(std::fs::File::create(p)?)?;
            }
            emit(out.as_deref(), &serde_json::to_value(&report)?)
        }
        Command::LowerBound { k, eps, lambda, n, trials, seed, out } => {
            let r = run_lower_bound_experiment(k, eps, lambda, n, trials, seed)?;
            emit(out.as_deref(), &serde_json::to_value(&r)?)
        }
        Command::Metric { a, b, kind } => {
            let fa = io::read_cdfs(&a)?;
            let fb = io::read_cdfs(&b)?;
            if fa.len() != fb.len() {
                return Err(Error::Validation(format!("{} CDFs against {}", fa.len(), fb.len())));
            }
            let values: Vec<f64> = fa
                .iter()
                .zip(&fb)
                .map(|(x, y)| match kind {
                    Metric::Kolmogorov => kolmogorov(x, y),
                    Metric::Levy => levy(x, y),
                    Metric::Wasserstein1 => wasserstein1(x, y),
                })
                .collect();
            emit(None, &json!({ "values": values }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = std::env::var("AUCTIONMETRICS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool that is already built keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
