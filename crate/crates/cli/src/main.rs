use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svl_core::harness::{report_from_table, run_benchmark, simulate_grid, write_fit, write_simulated, FitReport, GridSpec};
use svl_core::io::{read_json, read_returns, read_table, write_json, ReadOptions};
use svl_core::model::{simulate_svl, DgpSpec, Params, PriorConfig};
use svl_core::samplers::{default_burnin, run_chain, Algorithm, SamplerConfig};
use svl_core::Error;

#[derive(Parser)]
#[command(name = "svl", version, about = "MCMC for the stochastic volatility model with leverage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate returns and latent log-volatility from one DGP, or from a grid spec.
    Simulate(SimulateArgs),
    /// Fit the model to a return series.
    Fit(FitArgs),
    /// Run every cell of a grid spec and write runs.csv.
    Benchmark(BenchmarkArgs),
    /// Recompute the efficiency report of a draws CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid spec file; when given, one file per grid cell is written under --out.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV (single DGP) or directory (grid).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.95, allow_negative_numbers = true)]
    phi: f64,
    #[arg(long, default_value_t = -0.3, allow_negative_numbers = true)]
    rho: f64,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = -9.0, allow_negative_numbers = true)]
    mu: f64,
    /// Series length.
    #[arg(long = "len", short = 'T', default_value_t = 300)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PriorArgs {
    /// Beta shape parameters of (phi + 1) / 2.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    prior_phi: Option<Vec<f64>>,
    /// Beta shape parameters of (rho + 1) / 2.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    prior_rho: Option<Vec<f64>>,
    /// Gamma shape and rate of sigma^2.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    prior_sigma: Option<Vec<f64>>,
    /// Normal mean and variance of mu.
    #[arg(long, num_args = 2, value_names = ["M", "V"], allow_negative_numbers = true)]
    prior_mu: Option<Vec<f64>>,
}

impl PriorArgs {
    fn build(&self) -> Result<PriorConfig, Error> {
        let mut p = PriorConfig::default();
        if let Some(v) = &self.prior_phi {
            (p.a_phi, p.b_phi) = (v[0], v[1]);
        }
        if let Some(v) = &self.prior_rho {
            (p.a_rho, p.b_rho) = (v[0], v[1]);
        }
        if let Some(v) = &self.prior_sigma {
            (p.alpha_sigma, p.beta_sigma) = (v[0], v[1]);
        }
        if let Some(v) = &self.prior_mu {
            (p.mu_mu, p.sigma2_mu) = (v[0], v[1]);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Return (or, with --price-mode, price) CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for draws.csv and report.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "rwmh-asis")]
    sampler: Algorithm,
    #[arg(long, default_value_t = 5)]
    asis_repeats: usize,
    #[arg(long, default_value_t = 50_000)]
    draws: usize,
    /// Defaults to 2000 for series up to 300 observations, else 10000.
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random-walk proposal variance in transformed space.
    #[arg(long, default_value_t = 0.1)]
    rw_var: f64,
    #[command(flatten)]
    prior: PriorArgs,
    /// Convert a price column to de-meaned log returns.
    #[arg(long)]
    price_mode: bool,
    /// Column name or zero-based index; defaults to the last column.
    #[arg(long)]
    column: Option<String>,
    /// Zero-based time indices whose log-volatility draws are stored.
    #[arg(long, value_delimiter = ',')]
    store_h: Vec<usize>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Grid spec file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// draws.csv written by `fit`.
    #[arg(long)]
    data: PathBuf,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling wall-clock seconds. Defaults to the value in a report.json
    /// next to the draws.
    #[arg(long)]
    runtime: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure(_) | Error::FilterBreakdown { .. } => 3,
        _ => 2,
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    if let Some(spec_path) = &a.data {
        let spec = GridSpec::parse(&std::fs::read_to_string(spec_path)?)?;
        let files = simulate_grid(&spec, &a.out)?;
        println!("wrote {} data sets to {}", files.len(), a.out.display());
        return Ok(());
    }
    let params = Params::new(a.phi, a.rho, a.sigma, a.mu)?;
    let (y, h) = simulate_svl(&DgpSpec { params, len: a.len, seed: a.seed })?;
    let side = write_simulated(&a.out, &y, &h)?;
    println!("wrote {} and {}", a.out.display(), side.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<(), Error> {
    let prior = a.prior.build()?;
    let opts = ReadOptions { column: a.column.clone(), price_mode: a.price_mode };
    let data = read_returns(&a.data, &opts)?;
    let len = data.series.len();
    let cfg = SamplerConfig {
        asis_repeats: a.asis_repeats,
        rw_variance: a.rw_var,
        n_draws: a.draws,
        n_burnin: a.burnin.unwrap_or_else(|| default_burnin(len)),
        thin: a.thin,
        seed: a.seed,
        store_h_at: a.store_h.clone(),
        ..SamplerConfig::new(a.sampler)
    };
    if data.info.degenerate {
        eprintln!("warning: every return is zero; the fit is driven by the prior and the offset");
    }
    let out = run_chain(&data.series, &prior, &cfg)?;
    let report = FitReport::new(&out, data.info);
    write_fit(&a.out, &out, &report)?;
    println!("{:<6} {:>10} {:>10} {:>10} {:>10}", "param", "mean", "sd", "ess", "esr");
    for p in &report.efficiency.params {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        println!("{:<6} {:>10.4} {:>10.4} {:>10} {:>10}", p.name, p.mean, p.sd, f(p.ess), f(p.esr));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<(), Error> {
    let spec = GridSpec::parse(&std::fs::read_to_string(&a.data)?)?;
    let recs = run_benchmark(&spec, &a.out, a.jobs)?;
    let failed = recs.iter().filter(|r| r.status != "ok").count();
    println!("{} cells, {} with problems; wrote {}", recs.len(), failed, a.out.join("runs.csv").display());
    if !recs.is_empty() && recs.iter().all(|r| r.min_esr.is_none()) {
        return Err(Error::NumericalFailure("no cell produced a usable result".into()));
    }
    Ok(())
}

fn sibling_runtime(draws: &Path) -> Result<f64, Error> {
    let path = draws.with_file_name("report.json");
    let report: FitReport = read_json(&path)
        .map_err(|e| Error::InvalidInput(format!("--runtime not given and {} unusable: {e}", path.display())))?;
    Ok(report.sampling_seconds)
}

fn report(a: ReportArgs) -> Result<(), Error> {
    let (names, cols) = read_table(&a.data)?;
    let seconds = match a.runtime {
        Some(s) => s,
        None => sibling_runtime(&a.data)?,
    };
    let eff = report_from_table(&names, &cols, seconds)?;
    match &a.out {
        Some(path) => write_json(path, &eff)?,
        None => println!("{}", serde_json::to_string_pretty(&eff)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NumericalFailure("x".into())), 3);
        assert_eq!(exit_code(&Error::FilterBreakdown { t: 0, variance: 0.0 }), 3);
        assert_eq!(exit_code(&Error::Malformed { row: 1, column: 1, message: String::new() }), 2);
        assert_eq!(exit_code(&Error::TooShort { len: 1, min: 2 }), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
