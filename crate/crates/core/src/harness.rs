//! Fitting reports, the grid specification format, grid simulation and the
//! parallel benchmark runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{efficiency_from_columns, efficiency_report, EfficiencyReport};
use crate::error::{Error, Result};
use crate::io::{write_column, write_json, write_table, DataInfo};
use crate::model::{simulate_svl, DgpSpec, LatentPath, Params, PriorConfig, ReturnSeries};
use crate::rng::{derive_seed, str_word};
use crate::samplers::{
    default_burnin, run_chain, Algorithm, ChainOutput, Flags, MoveCounters, SamplerConfig, StepTimes, WindowStats,
    PARAM_NAMES,
};

/// Autocorrelation lags kept in JSON reports.
pub const REPORT_ACF_LAGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub latent: Option<f64>,
    pub theta_centered: Option<f64>,
    pub theta_non_centered: Option<f64>,
    pub aux_theta: Option<f64>,
}

impl From<&MoveCounters> for AcceptanceRates {
    fn from(c: &MoveCounters) -> Self {
        Self {
            latent: c.latent.rate(),
            theta_centered: c.theta_centered.rate(),
            theta_non_centered: c.theta_non_centered.rate(),
            aux_theta: c.aux_theta.rate(),
        }
    }
}

/// Everything `fit` writes besides the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub sampler: Algorithm,
    pub data: DataInfo,
    pub config: SamplerConfig,
    pub prior: PriorConfig,
    pub sampling_seconds: f64,
    pub burnin_seconds: f64,
    pub efficiency: EfficiencyReport,
    pub acceptance: AcceptanceRates,
    pub flags: Flags,
    pub failed_sweeps: u64,
    pub windows: Vec<WindowStats>,
    pub step_times: StepTimes,
}

impl FitReport {
    pub fn new(out: &ChainOutput, data: DataInfo) -> Self {
        Self {
            sampler: out.config.algorithm,
            data,
            config: out.config.clone(),
            prior: out.prior,
            sampling_seconds: out.sampling_seconds,
            burnin_seconds: out.burnin_seconds,
            efficiency: efficiency_report(out, REPORT_ACF_LAGS),
            acceptance: (&out.counters).into(),
            flags: out.flags,
            failed_sweeps: out.failed_sweeps,
            windows: out.windows.clone(),
            step_times: out.step_times,
        }
    }
}

/// Recomputes the efficiency part of a report from a draws table.
pub fn report_from_table(names: &[String], columns: &[Vec<f64>], seconds: f64) -> Result<EfficiencyReport> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::InvalidInput(format!("runtime must be > 0 seconds, got {seconds}")));
    }
    if columns.iter().any(|c| c.len() != columns[0].len()) || columns.is_empty() || columns[0].is_empty() {
        return Err(Error::InvalidInput("draws table is empty or ragged".into()));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(efficiency_from_columns(&refs, columns, seconds, REPORT_ACF_LAGS))
}

/// Writes `draws.csv` (and `h_draws.csv` when states were stored) plus
/// `report.json` into `dir`.
pub fn write_fit(dir: &Path, out: &ChainOutput, report: &FitReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_table(&dir.join("draws.csv"), &PARAM_NAMES, &out.draws)?;
    if !out.h_draws.is_empty() {
        let names: Vec<String> = out.config.store_h_at.iter().map(|t| format!("h{t}")).collect();
        let mut text = names.join(",") + "\n";
        for row in &out.h_draws {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            text += &(cells.join(",") + "\n");
        }
        std::fs::write(dir.join("h_draws.csv"), text)?;
    }
    write_json(&dir.join("report.json"), report)
}

/// Grid of data-generating processes and benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: f64,
    pub lengths: Vec<usize>,
    pub replications: usize,
    pub samplers: Vec<Algorithm>,
    pub seed: u64,
    pub draws: usize,
    /// `None` uses the length-dependent default.
    pub burnin: Option<usize>,
    pub thin: usize,
    pub asis_repeats: usize,
    pub rw_var: f64,
    pub prior: PriorConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            phi: vec![0.0, 0.5, 0.9, 0.95, 0.99],
            rho: vec![-0.6, -0.3, 0.0, 0.3, 0.6],
            sigma: vec![0.1, 0.3, 0.5],
            mu: -9.0,
            lengths: vec![300],
            replications: 10,
            samplers: Algorithm::ALL.to_vec(),
            seed: 0,
            draws: 50_000,
            burnin: None,
            thin: 1,
            asis_repeats: 5,
            rw_var: 0.1,
            prior: PriorConfig::default(),
        }
    }
}

impl GridSpec {
    /// Parses the flat `key = value[, value...]` format. `#` starts a comment.
    /// Keys: phi, rho, sigma, mu, T, replications, samplers, seed, draws,
    /// burnin, thin, asis_repeats, rw_var, prior_phi, prior_rho,
    /// prior_sigma, prior_mu. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = GridSpec::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::GridSpec { line: line_no, message: m };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let key = key.trim().to_ascii_lowercase();
            if seen.insert(key.clone(), line_no).is_some() {
                return Err(err(format!("duplicate key '{key}'")));
            }
            let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if items.is_empty() {
                return Err(err(format!("no value for '{key}'")));
            }
            let floats = || {
                items
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(format!("'{s}' is not a number"))))
                    .collect::<Result<Vec<f64>>>()
            };
            let ints = || {
                items
                    .iter()
                    .map(|s| s.parse::<u64>().map_err(|_| err(format!("'{s}' is not a non-negative integer"))))
                    .collect::<Result<Vec<u64>>>()
            };
            let one_int = || -> Result<u64> {
                let v = ints()?;
                if v.len() != 1 {
                    return Err(err(format!("'{key}' takes one value")));
                }
                Ok(v[0])
            };
            let pair = || -> Result<(f64, f64)> {
                let v = floats()?;
                if v.len() != 2 {
                    return Err(err(format!("'{key}' takes two values")));
                }
                Ok((v[0], v[1]))
            };
            match key.as_str() {
                "phi" => spec.phi = floats()?,
                "rho" => spec.rho = floats()?,
                "sigma" => spec.sigma = floats()?,
                "mu" => {
                    let v = floats()?;
                    if v.len() != 1 {
                        return Err(err("'mu' takes one value".into()));
                    }
                    spec.mu = v[0];
                }
                "t" | "len" | "lengths" => spec.lengths = ints()?.into_iter().map(|v| v as usize).collect(),
                "replications" => spec.replications = one_int()? as usize,
                "samplers" => {
                    spec.samplers = items
                        .iter()
                        .map(|s| s.parse::<Algorithm>().map_err(|e| err(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "seed" => spec.seed = one_int()?,
                "draws" => spec.draws = one_int()? as usize,
                "burnin" => spec.burnin = Some(one_int()? as usize),
                "thin" => spec.thin = one_int()? as usize,
                "asis_repeats" => spec.asis_repeats = one_int()? as usize,
                "rw_var" => {
                    let v = floats()?;
                    spec.rw_var = *v.first().filter(|_| v.len() == 1).ok_or_else(|| err("'rw_var' takes one value".into()))?;
                }
                "prior_phi" => (spec.prior.a_phi, spec.prior.b_phi) = pair()?,
                "prior_rho" => (spec.prior.a_rho, spec.prior.b_rho) = pair()?,
                "prior_sigma" => (spec.prior.alpha_sigma, spec.prior.beta_sigma) = pair()?,
                "prior_mu" => (spec.prior.mu_mu, spec.prior.sigma2_mu) = pair()?,
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::GridSpec { line: 0, message: m.to_string() });
        if self.phi.is_empty() || self.rho.is_empty() || self.sigma.is_empty() || self.lengths.is_empty() {
            return err("value lists must be non-empty");
        }
        if self.samplers.is_empty() {
            return err("no samplers");
        }
        if self.replications == 0 || self.draws == 0 || self.thin == 0 || self.asis_repeats == 0 {
            return err("replications, draws, thin and asis_repeats must be >= 1");
        }
        if self.lengths.iter().any(|&t| t < 2) {
            return err("series lengths must be >= 2");
        }
        for p in self.points() {
            if !p.is_valid() {
                return err(&format!("invalid grid point {p:?}"));
            }
        }
        if !(self.rw_var >= 0.0 && self.rw_var.is_finite()) {
            return err("rw_var must be >= 0");
        }
        self.prior.validate()
    }

    pub fn points(&self) -> Vec<Params> {
        let mut out = Vec::new();
        for &phi in &self.phi {
            for &rho in &self.rho {
                for &sigma in &self.sigma {
                    out.push(Params { phi, rho, sigma, mu: self.mu });
                }
            }
        }
        out
    }

    /// Seed of the simulated data for one grid point, length and replication.
    pub fn data_seed(&self, p: &Params, len: usize, rep: usize) -> u64 {
        derive_seed(
            self.seed,
            &[p.phi.to_bits(), p.rho.to_bits(), p.sigma.to_bits(), p.mu.to_bits(), len as u64, rep as u64],
        )
    }

    /// Chain seed of one cell; independent of which other samplers are listed.
    pub fn cell_seed(&self, p: &Params, len: usize, rep: usize, sampler: Algorithm) -> u64 {
        derive_seed(self.data_seed(p, len, rep), &[str_word(sampler.name())])
    }

    pub fn sampler_config(&self, sampler: Algorithm, len: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            asis_repeats: self.asis_repeats,
            rw_variance: self.rw_var,
            n_draws: self.draws,
            n_burnin: self.burnin.unwrap_or_else(|| default_burnin(len)),
            thin: self.thin,
            seed,
            ..SamplerConfig::new(sampler)
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for p in self.points() {
            for &len in &self.lengths {
                for rep in 0..self.replications {
                    for &sampler in &self.samplers {
                        out.push(Cell { index: out.len(), params: p, len, rep, sampler });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub params: Params,
    pub len: usize,
    pub rep: usize,
    pub sampler: Algorithm,
}

/// File name encoding the grid coordinates.
pub fn data_file_name(p: &Params, len: usize, rep: usize) -> String {
    format!("svl_phi{}_rho{}_sigma{}_mu{}_T{}_rep{}.csv", p.phi, p.rho, p.sigma, p.mu, len, rep)
}

/// Writes a return series and its latent path sidecar (`<stem>.latent.csv`).
pub fn write_simulated(path: &Path, y: &ReturnSeries, h: &LatentPath) -> Result<PathBuf> {
    write_column(path, "y", &y.y)?;
    let side = path.with_extension("latent.csv");
    write_column(&side, "h", &h.values)?;
    Ok(side)
}

/// Simulates every grid point, length and replication into `dir`, with the
/// latent paths under `dir/latent`. Uses the same seeds as the benchmark.
pub fn simulate_grid(spec: &GridSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("latent"))?;
    let mut files = Vec::new();
    for p in spec.points() {
        for &len in &spec.lengths {
            for rep in 0..spec.replications {
                let (y, h) = simulate_svl(&DgpSpec { params: p, len, seed: spec.data_seed(&p, len, rep) })?;
                let name = data_file_name(&p, len, rep);
                let path = dir.join(&name);
                write_column(&path, "y", &y.y)?;
                write_column(&dir.join("latent").join(name), "h", &h.values)?;
                files.push(path);
            }
        }
    }
    Ok(files)
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub phi_true: f64,
    pub rho_true: f64,
    pub sigma_true: f64,
    pub mu_true: f64,
    pub len: usize,
    pub rep: usize,
    pub sampler: Algorithm,
    pub seed: u64,
    pub data_seed: u64,
    pub draws: usize,
    pub burnin: usize,
    pub phi_mean: Option<f64>,
    pub phi_sd: Option<f64>,
    pub phi_q025: Option<f64>,
    pub phi_q975: Option<f64>,
    pub phi_ess: Option<f64>,
    pub phi_if: Option<f64>,
    pub phi_esr: Option<f64>,
    pub rho_mean: Option<f64>,
    pub rho_sd: Option<f64>,
    pub rho_q025: Option<f64>,
    pub rho_q975: Option<f64>,
    pub rho_ess: Option<f64>,
    pub rho_if: Option<f64>,
    pub rho_esr: Option<f64>,
    pub sigma_mean: Option<f64>,
    pub sigma_sd: Option<f64>,
    pub sigma_q025: Option<f64>,
    pub sigma_q975: Option<f64>,
    pub sigma_ess: Option<f64>,
    pub sigma_if: Option<f64>,
    pub sigma_esr: Option<f64>,
    pub mu_mean: Option<f64>,
    pub mu_sd: Option<f64>,
    pub mu_q025: Option<f64>,
    pub mu_q975: Option<f64>,
    pub mu_ess: Option<f64>,
    pub mu_if: Option<f64>,
    pub mu_esr: Option<f64>,
    pub min_esr: Option<f64>,
    pub acc_latent: Option<f64>,
    pub acc_theta_centered: Option<f64>,
    pub acc_theta_non_centered: Option<f64>,
    pub acc_aux_theta: Option<f64>,
    pub smoother_breakdown: u64,
    pub filter_breakdown: u64,
    pub optimizer_nonconvergence: u64,
    pub hessian_fallback: u64,
    pub failed_sweeps: u64,
    pub stuck_windows: usize,
    pub sampling_seconds: Option<f64>,
    pub burnin_seconds: Option<f64>,
    /// `ok`, or a description of why the cell has no usable result.
    pub status: String,
}

impl RunRecord {
    fn empty(cell: &Cell, spec: &GridSpec) -> Self {
        let p = cell.params;
        let seed = spec.cell_seed(&p, cell.len, cell.rep, cell.sampler);
        let cfg = spec.sampler_config(cell.sampler, cell.len, seed);
        Self {
            cell: cell.index,
            phi_true: p.phi,
            rho_true: p.rho,
            sigma_true: p.sigma,
            mu_true: p.mu,
            len: cell.len,
            rep: cell.rep,
            sampler: cell.sampler,
            seed,
            data_seed: spec.data_seed(&p, cell.len, cell.rep),
            draws: cfg.n_draws,
            burnin: cfg.n_burnin,
            phi_mean: None,
            phi_sd: None,
            phi_q025: None,
            phi_q975: None,
            phi_ess: None,
            phi_if: None,
            phi_esr: None,
            rho_mean: None,
            rho_sd: None,
            rho_q025: None,
            rho_q975: None,
            rho_ess: None,
            rho_if: None,
            rho_esr: None,
            sigma_mean: None,
            sigma_sd: None,
            sigma_q025: None,
            sigma_q975: None,
            sigma_ess: None,
            sigma_if: None,
            sigma_esr: None,
            mu_mean: None,
            mu_sd: None,
            mu_q025: None,
            mu_q975: None,
            mu_ess: None,
            mu_if: None,
            mu_esr: None,
            min_esr: None,
            acc_latent: None,
            acc_theta_centered: None,
            acc_theta_non_centered: None,
            acc_aux_theta: None,
            smoother_breakdown: 0,
            filter_breakdown: 0,
            optimizer_nonconvergence: 0,
            hessian_fallback: 0,
            failed_sweeps: 0,
            stuck_windows: 0,
            sampling_seconds: None,
            burnin_seconds: None,
            status: String::new(),
        }
    }

    fn fill(&mut self, out: &ChainOutput) {
        let eff = efficiency_report(out, 0);
        let slots = [
            (&mut self.phi_mean, &mut self.phi_sd, &mut self.phi_q025, &mut self.phi_q975, &mut self.phi_ess, &mut self.phi_if, &mut self.phi_esr),
            (&mut self.rho_mean, &mut self.rho_sd, &mut self.rho_q025, &mut self.rho_q975, &mut self.rho_ess, &mut self.rho_if, &mut self.rho_esr),
            (&mut self.sigma_mean, &mut self.sigma_sd, &mut self.sigma_q025, &mut self.sigma_q975, &mut self.sigma_ess, &mut self.sigma_if, &mut self.sigma_esr),
            (&mut self.mu_mean, &mut self.mu_sd, &mut self.mu_q025, &mut self.mu_q975, &mut self.mu_ess, &mut self.mu_if, &mut self.mu_esr),
        ];
        let mut errors = Vec::new();
        for ((mean, sd, lo, hi, ess, inef, esr), s) in slots.into_iter().zip(&eff.params) {
            *mean = Some(s.mean);
            *sd = Some(s.sd);
            *lo = Some(s.q025);
            *hi = Some(s.q975);
            *ess = s.ess;
            *inef = s.inefficiency;
            *esr = s.esr;
            if let Some(e) = &s.error {
                errors.push(format!("{}: {e}", s.name));
            }
        }
        self.min_esr = eff.min_esr;
        let acc = AcceptanceRates::from(&out.counters);
        self.acc_latent = acc.latent;
        self.acc_theta_centered = acc.theta_centered;
        self.acc_theta_non_centered = acc.theta_non_centered;
        self.acc_aux_theta = acc.aux_theta;
        self.smoother_breakdown = out.flags.smoother_breakdown;
        self.filter_breakdown = out.flags.filter_breakdown;
        self.optimizer_nonconvergence = out.flags.optimizer_nonconvergence;
        self.hessian_fallback = out.flags.hessian_fallback;
        self.failed_sweeps = out.failed_sweeps;
        self.stuck_windows = out
            .windows
            .iter()
            .filter(|w| {
                let c = &w.counters;
                [c.latent, c.theta_centered, c.theta_non_centered, c.aux_theta]
                    .iter()
                    .any(|m| m.proposed > 0 && (m.accepted == 0 || m.accepted == m.proposed))
            })
            .count();
        self.sampling_seconds = Some(out.sampling_seconds);
        self.burnin_seconds = Some(out.burnin_seconds);
        self.status = if errors.is_empty() { "ok".into() } else { errors.join("; ") };
    }
}

/// Simulates the data of one cell and runs its chain. Never fails: problems
/// are recorded in the record's status.
pub fn run_cell(spec: &GridSpec, cell: &Cell) -> RunRecord {
    let mut rec = RunRecord::empty(cell, spec);
    let data = simulate_svl(&DgpSpec { params: cell.params, len: cell.len, seed: rec.data_seed });
    let result = data.and_then(|(y, _)| {
        let cfg = spec.sampler_config(cell.sampler, cell.len, rec.seed);
        run_chain(&y, &spec.prior, &cfg)
    });
    match result {
        Ok(out) => rec.fill(&out),
        Err(e) => rec.status = format!("error: {e}"),
    }
    rec
}

/// Runs every cell, at most `jobs` at a time, appending each record to
/// `dir/runs.csv` as soon as it completes. Returns the records in cell order.
pub fn run_benchmark(spec: &GridSpec, dir: &Path, jobs: usize) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("grid.json"), spec)?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut writer = csv::Writer::from_path(dir.join("runs.csv"))?;
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut records = Vec::with_capacity(cells.len());
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().for_each_with(tx, |tx, cell| {
                    // the receiver only goes away on a write error
                    let _ = tx.send(run_cell(spec, cell));
                });
            });
        });
        for rec in rx {
            writer.serialize(&rec)?;
            writer.flush()?;
            records.push(rec);
        }
        Ok(())
    })?;
    records.sort_by_key(|r| r.cell);
    Ok(records)
}

/// Reads a benchmark table back.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}
