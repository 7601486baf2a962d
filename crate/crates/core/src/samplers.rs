//! The AUX, RWMH-C, RWMH-N and RWMH-ASISxK samplers and the chain driver.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{collapsed_loglik, draw_mu_conjugate, smooth_aux};
use crate::mixture::{
    aux_log_density_marginal, linearize, sample_indicators, sample_indicators_with_density,
    IndicatorVector, Linearized, MixtureTable, DEFAULT_OFFSET,
};
use crate::model::{
    from_transformed, log_jacobian, log_joint_centered, log_joint_non_centered, log_prior,
    log_prior_phi_rho_sigma, to_transformed, LatentPath, Parameterization, Params, PriorConfig,
    ReturnSeries, TransformedParams,
};
use crate::optim::{cholesky, forward_solve, minimize_bfgs, numerical_hessian, spd_inverse, OptimizerConfig};
use crate::rng::rng_from_seed;

pub const PARAM_NAMES: [&str; 4] = ["phi", "rho", "sigma", "mu"];

/// Iterations per acceptance-statistics window.
pub const WINDOW: usize = 1000;

const INIT_HALF_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Aux,
    RwmhC,
    RwmhN,
    RwmhAsis,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Aux, Algorithm::RwmhC, Algorithm::RwmhN, Algorithm::RwmhAsis];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Aux => "aux",
            Algorithm::RwmhC => "rwmh-c",
            Algorithm::RwmhN => "rwmh-n",
            Algorithm::RwmhAsis => "rwmh-asis",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown sampler '{s}'")))
    }
}

/// Burn-in length used when none is given.
pub fn default_burnin(len: usize) -> usize {
    if len <= 300 {
        2000
    } else {
        10000
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    /// Number of interweaving rounds per sweep (RWMH-ASISxK only).
    pub asis_repeats: usize,
    /// Per-coordinate variance of the random walk on the transformed parameters.
    pub rw_variance: f64,
    pub n_draws: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Time indices (zero-based) at which the latent path is stored.
    pub store_h_at: Vec<usize>,
    /// Offset in `log(y^2 + offset)`.
    pub offset: f64,
    pub optimizer: OptimizerConfig,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            asis_repeats: 5,
            rw_variance: 0.1,
            n_draws: 50_000,
            n_burnin: 2000,
            thin: 1,
            seed: 0,
            store_h_at: Vec::new(),
            offset: DEFAULT_OFFSET,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.rw_variance >= 0.0 && self.rw_variance.is_finite()) {
            return bad(format!("rw variance must be >= 0, got {}", self.rw_variance));
        }
        if self.asis_repeats == 0 {
            return bad("asis repeats must be >= 1".into());
        }
        if self.n_draws == 0 {
            return bad("draws must be >= 1".into());
        }
        if self.thin == 0 {
            return bad("thin must be >= 1".into());
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return bad(format!("offset must be > 0, got {}", self.offset));
        }
        if let Some(&t) = self.store_h_at.iter().find(|&&t| t >= len) {
            return bad(format!("stored time point {t} outside series of length {len}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    fn since(&self, earlier: &MoveStats) -> MoveStats {
        MoveStats {
            proposed: self.proposed - earlier.proposed,
            accepted: self.accepted - earlier.accepted,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounters {
    pub latent: MoveStats,
    pub theta_centered: MoveStats,
    pub theta_non_centered: MoveStats,
    pub aux_theta: MoveStats,
}

impl MoveCounters {
    fn since(&self, earlier: &MoveCounters) -> MoveCounters {
        MoveCounters {
            latent: self.latent.since(&earlier.latent),
            theta_centered: self.theta_centered.since(&earlier.theta_centered),
            theta_non_centered: self.theta_non_centered.since(&earlier.theta_non_centered),
            aux_theta: self.aux_theta.since(&earlier.aux_theta),
        }
    }

    pub fn total_accepted(&self) -> u64 {
        self.latent.accepted
            + self.theta_centered.accepted
            + self.theta_non_centered.accepted
            + self.aux_theta.accepted
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub smoother_breakdown: u64,
    pub filter_breakdown: u64,
    pub optimizer_nonconvergence: u64,
    pub hessian_fallback: u64,
}

impl Flags {
    fn failures(&self) -> u64 {
        self.smoother_breakdown + self.filter_breakdown + self.optimizer_nonconvergence
    }
}

/// Accumulated wall-clock seconds per sweep component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimes {
    pub indicators: f64,
    pub collapsed_mh: f64,
    pub mu_and_path: f64,
    pub latent_update: f64,
    pub theta_moves: f64,
}

impl StepTimes {
    pub fn total(&self) -> f64 {
        self.indicators + self.collapsed_mh + self.mu_and_path + self.latent_update + self.theta_moves
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: Params,
    /// Always stored centered between sweeps.
    pub h: LatentPath,
    pub s: IndicatorVector,
    pub counters: MoveCounters,
    pub flags: Flags,
    pub times: StepTimes,
    pub iteration: u64,
}

impl ChainState {
    pub fn new(params: Params, h: Vec<f64>) -> Self {
        let n = h.len();
        Self {
            params,
            h: LatentPath::centered(h),
            s: IndicatorVector { s: vec![0; n] },
            counters: MoveCounters::default(),
            flags: Flags::default(),
            times: StepTimes::default(),
            iteration: 0,
        }
    }

    /// Prior means for theta. The path starts at a centred moving average of
    /// `y*` (half-width `INIT_HALF_WIDTH`) shifted by the mean of `log eps^2`.
    /// The raw `y*` is too rough: at T = 3000 it leaves AUX stuck.
    pub fn initial(lin: &Linearized, prior: &PriorConfig) -> Self {
        let params = prior.mean_params();
        let shift = MixtureTable::omori().mean_log_eps2();
        let n = lin.len();
        let mut prefix = vec![0.0; n + 1];
        for (t, v) in lin.y_star.iter().enumerate() {
            prefix[t + 1] = prefix[t] + v;
        }
        let h = (0..n)
            .map(|t| {
                let lo = t.saturating_sub(INIT_HALF_WIDTH);
                let hi = (t + INIT_HALF_WIDTH + 1).min(n);
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64 - shift
            })
            .collect();
        Self::new(params, h)
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    // NaN compares false and is rejected
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// MH update of the latent path with a proposal from the auxiliary model,
/// corrected towards the exact posterior. `log_target` evaluates the exact
/// log joint at a centered path.
pub(crate) fn latent_update_with<R: Rng + ?Sized>(
    state: &mut ChainState,
    lin: &Linearized,
    table: &MixtureTable,
    rng: &mut R,
    log_target: impl Fn(&[f64], &Params) -> f64,
) -> bool {
    let p = state.params;
    let (s, ln_aux_cur) = sample_indicators_with_density(lin, &state.h, &p, table, rng);
    state.s = s;
    let ht = match smooth_aux(lin, &state.s, &p, table, rng) {
        Ok(v) => v,
        Err(_) => {
            state.flags.smoother_breakdown += 1;
            state.counters.latent.record(false);
            return false;
        }
    };
    let h_new: Vec<f64> = ht.iter().map(|v| p.mu + p.sigma * v).collect();
    let ln_aux_new = aux_log_density_marginal(&LatentPath::non_centered(ht), lin, &p, table);
    let log_ratio = (log_target(&h_new, &p) - log_target(&state.h.values, &p)) + (ln_aux_cur - ln_aux_new);
    let ok = accept(log_ratio, rng) && h_new.iter().all(|v| v.is_finite());
    if ok {
        state.h = LatentPath::centered(h_new);
    }
    state.counters.latent.record(ok);
    ok
}

/// Draws `s | y, h, theta`, proposes a path from the auxiliary model given
/// `s`, and accepts it with the ratio that corrects for the approximation.
/// The refreshed indicators are kept either way.
pub fn latent_update<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &[f64],
    lin: &Linearized,
    table: &MixtureTable,
    rng: &mut R,
) -> bool {
    latent_update_with(state, lin, table, rng, |h, p| log_joint_centered(h, y, p))
}

/// Random-walk move on `(atanh phi, atanh rho, log sigma^2, mu)` holding the
/// latent path fixed in the given parameterization. `log_lik(p, path)` is the
/// log density of data and path given `p`.
pub(crate) fn rwmh_theta_with<R: Rng + ?Sized>(
    state: &mut ChainState,
    parameterization: Parameterization,
    rw_variance: f64,
    prior: &PriorConfig,
    rng: &mut R,
    log_lik: impl Fn(&Params, &[f64]) -> f64,
) -> bool {
    let p = state.params;
    let ht: Option<Vec<f64>> = match parameterization {
        Parameterization::Centered => None,
        Parameterization::NonCentered => Some(state.h.to_non_centered(&p).values),
    };
    let path = ht.as_deref().unwrap_or(&state.h.values);

    let cur = to_transformed(&p);
    let sd = rw_variance.sqrt();
    let mut x = cur.as_array();
    for v in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
    let prop = TransformedParams::from_array(x);
    let p_new = from_transformed(&prop);

    let log_target = |q: &Params, t: &TransformedParams| log_lik(q, path) + log_prior(q, prior) + log_jacobian(t);
    let ok = if p_new.is_valid() {
        let ratio = log_target(&p_new, &prop) - log_target(&p, &cur);
        accept(ratio, rng)
    } else {
        let _: f64 = rng.random();
        false
    };
    if ok {
        state.params = p_new;
        if let Some(ht) = ht {
            state.h = LatentPath::centered(ht.iter().map(|v| p_new.mu + p_new.sigma * v).collect());
        }
    }
    match parameterization {
        Parameterization::Centered => state.counters.theta_centered.record(ok),
        Parameterization::NonCentered => state.counters.theta_non_centered.record(ok),
    }
    ok
}

/// Random-walk MH move on theta. Under the non-centered parameterization
/// `ht = (h - mu) / sigma` is held fixed and the stored centered path is
/// re-derived from it after an accepted move.
pub fn rwmh_theta<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &[f64],
    parameterization: Parameterization,
    rw_variance: f64,
    prior: &PriorConfig,
    rng: &mut R,
) -> bool {
    match parameterization {
        Parameterization::Centered => {
            rwmh_theta_with(state, parameterization, rw_variance, prior, rng, |p, h| log_joint_centered(h, y, p))
        }
        Parameterization::NonCentered => rwmh_theta_with(state, parameterization, rw_variance, prior, rng, |p, ht| {
            log_joint_non_centered(ht, y, p)
        }),
    }
}

/// `repeats` rounds of: map to `ht` with the current `(mu, sigma)`, move
/// theta holding `ht` fixed, map back to `h`. Returns the number of accepted moves.
pub fn asis_interweave<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &[f64],
    prior: &PriorConfig,
    rw_variance: f64,
    repeats: usize,
    rng: &mut R,
) -> usize {
    (0..repeats)
        .filter(|_| rwmh_theta(state, y, Parameterization::NonCentered, rw_variance, prior, rng))
        .count()
}

/// Log density of a multivariate normal with lower Cholesky factor `l`, up to a constant.
fn ln_gauss<const N: usize>(x: &[f64; N], mean: &[f64; N], l: &[[f64; N]; N]) -> f64 {
    let mut d = [0.0; N];
    for i in 0..N {
        d[i] = x[i] - mean[i];
    }
    let z = forward_solve(l, &d);
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - (0..N).map(|i| l[i][i].ln()).sum::<f64>()
}

fn theta3(p: &Params) -> [f64; 3] {
    let t = to_transformed(p);
    [t.z_phi, t.z_rho, t.log_sigma2]
}

fn params3(x: &[f64; 3], mu: f64) -> Params {
    from_transformed(&TransformedParams { z_phi: x[0], z_rho: x[1], log_sigma2: x[2], mu })
}

/// Independence MH for `(phi, rho, sigma)` with a Gaussian proposal at the
/// mode of `log_target` (a function of the three transformed coordinates).
/// The search starts from `start` rather than the current state so that
/// the proposal does not depend on it.
pub(crate) fn laplace_mh<R: Rng + ?Sized>(
    state: &mut ChainState,
    start: [f64; 3],
    opt: &OptimizerConfig,
    rng: &mut R,
    log_target: impl Fn(&[f64; 3]) -> f64,
) -> bool {
    let neg = |x: &[f64; 3]| -log_target(x);
    let res = minimize_bfgs(neg, start, opt);
    if !res.converged || !res.value.is_finite() {
        state.flags.optimizer_nonconvergence += 1;
        state.counters.aux_theta.record(false);
        return false;
    }
    let hess = numerical_hessian(neg, &res.x, opt.hessian_step);
    let chol = spd_inverse(&hess).and_then(|c| cholesky(&c)).unwrap_or_else(|| {
        state.flags.hessian_fallback += 1;
        let sd = opt.fallback_variance.sqrt();
        [[sd, 0.0, 0.0], [0.0, sd, 0.0], [0.0, 0.0, sd]]
    });
    let mut prop = res.x;
    let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    for i in 0..3 {
        for (k, zk) in z.iter().enumerate().take(i + 1) {
            prop[i] += chol[i][k] * zk;
        }
    }
    let cur = theta3(&state.params);
    let lt_prop = log_target(&prop);
    let ok = lt_prop.is_finite() && {
        let ratio = lt_prop - log_target(&cur) + ln_gauss(&cur, &res.x, &chol) - ln_gauss(&prop, &res.x, &chol);
        accept(ratio, rng)
    };
    if ok {
        let p = params3(&prop, state.params.mu);
        if p.is_valid() {
            state.params = p;
        } else {
            state.counters.aux_theta.record(false);
            return false;
        }
    }
    state.counters.aux_theta.record(ok);
    ok
}

/// AUX step 2: independence MH for `(phi, rho, sigma) | y*, s` using the
/// Laplace approximation of the collapsed posterior (path and `mu`
/// integrated out).
pub fn aux_step2<R: Rng + ?Sized>(
    state: &mut ChainState,
    lin: &Linearized,
    table: &MixtureTable,
    prior: &PriorConfig,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> bool {
    let s = state.s.clone();
    let start = theta3(&prior.mean_params());
    let target = |x: &[f64; 3]| {
        let p = params3(x, prior.mu_mu);
        if !p.is_valid() {
            return f64::NEG_INFINITY;
        }
        let t = to_transformed(&p);
        match collapsed_loglik(lin, &s, p.phi, p.rho, p.sigma, prior, table) {
            Ok(ll) => ll + log_prior_phi_rho_sigma(&p, prior) + log_jacobian(&t),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    laplace_mh(state, start, opt, rng, target)
}

/// One AUX sweep: indicators, collapsed MH for `(phi, rho, sigma)`, then
/// `mu` and the path drawn exactly from the auxiliary model.
pub fn aux_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    lin: &Linearized,
    table: &MixtureTable,
    prior: &PriorConfig,
    opt: &OptimizerConfig,
    rng: &mut R,
) {
    let t0 = Instant::now();
    state.s = sample_indicators(lin, &state.h, &state.params, table, rng);
    let t1 = Instant::now();
    aux_step2(state, lin, table, prior, opt, rng);
    let t2 = Instant::now();
    let p = state.params;
    match draw_mu_conjugate(lin, &state.s, p.phi, p.rho, p.sigma, prior, table, rng) {
        Ok(mu) => {
            let p_new = Params { mu, ..p };
            match smooth_aux(lin, &state.s, &p_new, table, rng) {
                Ok(ht) => {
                    state.params = p_new;
                    state.h = LatentPath::centered(ht.iter().map(|v| mu + p.sigma * v).collect());
                }
                Err(_) => state.flags.smoother_breakdown += 1,
            }
        }
        Err(_) => state.flags.filter_breakdown += 1,
    }
    let t3 = Instant::now();
    state.times.indicators += (t1 - t0).as_secs_f64();
    state.times.collapsed_mh += (t2 - t1).as_secs_f64();
    state.times.mu_and_path += (t3 - t2).as_secs_f64();
}

/// One complete sweep of the configured algorithm. `y` is only read by the
/// RWMH samplers.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &[f64],
    lin: &Linearized,
    table: &MixtureTable,
    prior: &PriorConfig,
    cfg: &SamplerConfig,
    rng: &mut R,
) {
    if cfg.algorithm == Algorithm::Aux {
        aux_sweep(state, lin, table, prior, &cfg.optimizer, rng);
    } else {
        let t0 = Instant::now();
        latent_update(state, y, lin, table, rng);
        let t1 = Instant::now();
        let rw = cfg.rw_variance;
        match cfg.algorithm {
            Algorithm::RwmhC => {
                rwmh_theta(state, y, Parameterization::Centered, rw, prior, rng);
            }
            Algorithm::RwmhN => {
                rwmh_theta(state, y, Parameterization::NonCentered, rw, prior, rng);
            }
            Algorithm::RwmhAsis => {
                for _ in 0..cfg.asis_repeats {
                    rwmh_theta(state, y, Parameterization::Centered, rw, prior, rng);
                    asis_interweave(state, y, prior, rw, 1, rng);
                }
            }
            Algorithm::Aux => unreachable!(),
        }
        state.times.latent_update += (t1 - t0).as_secs_f64();
        state.times.theta_moves += t1.elapsed().as_secs_f64();
    }
    state.iteration += 1;
}

/// Acceptance rates over one window of sampling iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub start: usize,
    pub end: usize,
    pub counters: MoveCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub config: SamplerConfig,
    pub prior: PriorConfig,
    /// Rows of `(phi, rho, sigma, mu)`.
    pub draws: Vec<[f64; 4]>,
    /// Latent path values at `config.store_h_at`, one row per stored draw.
    pub h_draws: Vec<Vec<f64>>,
    pub sampling_seconds: f64,
    pub burnin_seconds: f64,
    /// Sampling phase only.
    pub counters: MoveCounters,
    pub burnin_counters: MoveCounters,
    pub flags: Flags,
    /// Sampling-phase sweeps in which some component failed numerically.
    pub failed_sweeps: u64,
    pub windows: Vec<WindowStats>,
    pub step_times: StepTimes,
}

impl ChainOutput {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Runs `n_burnin` discarded and `n_draws` recorded sweeps, keeping every
/// `thin`-th recorded sweep.
pub fn run_chain(y: &ReturnSeries, prior: &PriorConfig, cfg: &SamplerConfig) -> Result<ChainOutput> {
    prior.validate()?;
    cfg.validate(y.len())?;
    let table = MixtureTable::omori();
    let lin = linearize(y, cfg.offset)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut state = ChainState::initial(&lin, prior);

    let start = Instant::now();
    for _ in 0..cfg.n_burnin {
        sweep(&mut state, &y.y, &lin, &table, prior, cfg, &mut rng);
    }
    let burnin_seconds = start.elapsed().as_secs_f64();
    let burnin_counters = state.counters;
    state.counters = MoveCounters::default();
    state.flags = Flags::default();
    state.times = StepTimes::default();

    let mut draws = Vec::with_capacity(cfg.n_draws / cfg.thin);
    let mut h_draws = Vec::new();
    let mut windows = Vec::new();
    let mut window_start = state.counters;
    let mut failed_sweeps = 0;
    let start = Instant::now();
    for i in 0..cfg.n_draws {
        let before = state.flags.failures();
        sweep(&mut state, &y.y, &lin, &table, prior, cfg, &mut rng);
        if state.flags.failures() > before {
            failed_sweeps += 1;
        }
        if (i + 1) % cfg.thin == 0 {
            let p = state.params;
            draws.push([p.phi, p.rho, p.sigma, p.mu]);
            if !cfg.store_h_at.is_empty() {
                h_draws.push(cfg.store_h_at.iter().map(|&t| state.h.values[t]).collect());
            }
        }
        if (i + 1) % WINDOW == 0 || i + 1 == cfg.n_draws {
            windows.push(WindowStats {
                start: i + 1 - (i % WINDOW) - 1,
                end: i + 1,
                counters: state.counters.since(&window_start),
            });
            window_start = state.counters;
        }
    }
    let sampling_seconds = start.elapsed().as_secs_f64().max(1e-9);

    if failed_sweeps as usize == cfg.n_draws {
        return Err(Error::NumericalFailure(format!(
            "all {} sampling sweeps failed ({:?})",
            cfg.n_draws, state.flags
        )));
    }
    if draws.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite draw".into()));
    }
    Ok(ChainOutput {
        config: cfg.clone(),
        prior: *prior,
        draws,
        h_draws,
        sampling_seconds,
        burnin_seconds,
        counters: state.counters,
        burnin_counters,
        flags: state.flags,
        failed_sweeps,
        windows,
        step_times: state.times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_posterior_h_centered, simulate_svl, DgpSpec};
    use statrs::distribution::{Beta, ContinuousCDF};

    fn small_problem(len: usize, seed: u64) -> (ReturnSeries, Params) {
        let p = Params::new(0.9, -0.3, 0.3, -9.0).unwrap();
        let (y, _) = simulate_svl(&DgpSpec { params: p, len, seed }).unwrap();
        (y, p)
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("gibbs".parse::<Algorithm>().is_err());
    }

    #[test]
    fn latent_update_with_exact_auxiliary_target_always_accepts() {
        let (y, p) = small_problem(50, 1);
        let table = MixtureTable::omori();
        let lin = linearize(&y, DEFAULT_OFFSET).unwrap();
        let mut state = ChainState::initial(&lin, &PriorConfig::default());
        state.params = p;
        let mut rng = rng_from_seed(2);
        let target = |h: &[f64], p: &Params| aux_log_density_marginal(&LatentPath::centered(h.to_vec()), &lin, p, &table);
        for _ in 0..200 {
            assert!(latent_update_with(&mut state, &lin, &table, &mut rng, target));
        }
    }

    #[test]
    fn latent_update_keeps_refreshed_indicators_on_rejection() {
        let (y, p) = small_problem(30, 3);
        let table = MixtureTable::omori();
        let lin = linearize(&y, DEFAULT_OFFSET).unwrap();
        let mut state = ChainState::initial(&lin, &PriorConfig::default());
        state.params = p;
        let mut rng = rng_from_seed(4);
        let h0 = state.h.clone();
        let mut check = rng.clone();
        let ok = latent_update_with(&mut state, &lin, &table, &mut rng, |_, _| f64::NEG_INFINITY);
        assert!(!ok);
        assert_eq!(state.h, h0);
        let s = sample_indicators(&lin, &h0, &p, &table, &mut check);
        assert_eq!(state.s, s);
    }

    /// Exact posterior draws of a three-point path by inverse transform on a
    /// fine grid (jittered within cells).
    fn grid_posterior_draws(y: &ReturnSeries, p: &Params, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let k = 64;
        let sd = p.sigma / (1.0 - p.phi * p.phi).sqrt();
        let (lo, hi) = (p.mu - 6.0 * sd, p.mu + 6.0 * sd);
        let dx = (hi - lo) / k as f64;
        let mid = |i: usize| lo + (i as f64 + 0.5) * dx;
        let mut w = Vec::with_capacity(k * k * k);
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let h = LatentPath::centered(vec![mid(a), mid(b), mid(c)]);
                    w.push(log_posterior_h_centered(&h, y, p));
                }
            }
        }
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut cum = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        for v in &w {
            acc += (v - max).exp();
            cum.push(acc);
        }
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let idx = cum.partition_point(|&c| c < u);
                let (a, b, c) = (idx / (k * k), (idx / k) % k, idx % k);
                [a, b, c]
                    .iter()
                    .map(|&i| mid(i) + (rng.random::<f64>() - 0.5) * dx)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn latent_update_acceptance_matches_quadrature() {
        let p = Params::new(0.5, -0.5, 0.8, -1.0).unwrap();
        let y = ReturnSeries::new(vec![0.9, -1.4, 0.3], "toy").unwrap();
        let table = MixtureTable::omori();
        let lin = linearize(&y, DEFAULT_OFFSET).unwrap();
        let mut rng = rng_from_seed(5);

        // Expected acceptance under stationarity: average of the acceptance
        // probability over exact posterior draws of the current path.
        let n = 100_000;
        let draws = grid_posterior_draws(&y, &p, n, &mut rng);
        let mut expected = 0.0;
        for h in &draws {
            let cur = LatentPath::centered(h.clone());
            let s = sample_indicators(&lin, &cur, &p, &table, &mut rng);
            let ht = smooth_aux(&lin, &s, &p, &table, &mut rng).unwrap();
            let prop = LatentPath::centered(ht.iter().map(|v| p.mu + p.sigma * v).collect());
            let r = log_posterior_h_centered(&prop, &y, &p) - log_posterior_h_centered(&cur, &y, &p)
                + aux_log_density_marginal(&cur, &lin, &p, &table)
                - aux_log_density_marginal(&prop, &lin, &p, &table);
            expected += r.min(0.0).exp();
        }
        expected /= n as f64;

        let mut state = ChainState::new(p, draws[0].clone());
        for _ in 0..n {
            latent_update(&mut state, &y.y, &lin, &table, &mut rng);
        }
        let rate = state.counters.latent.rate().unwrap();
        assert!((rate - expected).abs() < 0.01, "chain {rate} vs quadrature {expected}");
    }

    #[test]
    fn zero_variance_walk_never_moves() {
        let (y, p) = small_problem(40, 6);
        let h = LatentPath::centered(vec![-9.0; 40]);
        let mut state = ChainState::new(p, h.values.clone());
        let mut rng = rng_from_seed(7);
        let prior = PriorConfig::default();
        for par in [Parameterization::Centered, Parameterization::NonCentered] {
            for _ in 0..100 {
                assert!(rwmh_theta(&mut state, &y.y, par, 0.0, &prior, &mut rng));
            }
        }
        assert_eq!(state.params, p);
        assert_eq!(state.counters.theta_centered.rate(), Some(1.0));
    }

    fn prior_only_chain(n: usize, seed: u64) -> Vec<f64> {
        let prior = PriorConfig::default();
        let mut state = ChainState::new(prior.mean_params(), vec![0.0; 3]);
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                rwmh_theta_with(&mut state, Parameterization::Centered, 0.1, &prior, &mut rng, |_, _| 0.0);
                state.params.phi
            })
            .collect()
    }

    #[test]
    fn prior_only_walk_reproduces_beta_prior() {
        let n = 100_000;
        let mut phi = prior_only_chain(n + 1000, 8).split_off(1000);
        phi.sort_by(f64::total_cmp);
        let beta = Beta::new(20.0, 1.5).unwrap();
        let ks = phi
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = beta.cdf(0.5 * (v + 1.0));
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        // iid critical value at 0.1% is 1.95 / sqrt(n); inflated for the
        // chain's autocorrelation (inefficiency factor around 10).
        assert!(ks < 1.95 * (10.0 / n as f64).sqrt(), "ks = {ks}");
    }

    #[test]
    fn walk_transitions_are_balanced_between_bins() {
        // Bowker symmetry test on transitions between 50 equal-mass bins of
        // the stationary law: reversibility implies N(i -> j) ~ N(j -> i).
        let n = 400_000;
        let phi = prior_only_chain(n + 1, 9);
        let beta = Beta::new(20.0, 1.5).unwrap();
        let bins = 50;
        let bin = |v: f64| ((beta.cdf(0.5 * (v + 1.0)) * bins as f64) as usize).min(bins - 1);
        let mut counts = vec![vec![0u64; bins]; bins];
        for w in phi.windows(2) {
            counts[bin(w[0])][bin(w[1])] += 1;
        }
        let mut stat = 0.0;
        let mut df = 0;
        for i in 0..bins {
            for j in i + 1..bins {
                let (a, b) = (counts[i][j] as f64, counts[j][i] as f64);
                if a + b > 0.0 {
                    stat += (a - b).powi(2) / (a + b);
                    df += 1;
                }
            }
        }
        // Transitions overlap in time, so this is conservative only roughly;
        // compare with a generous chi-square quantile.
        let z = (stat - df as f64) / (2.0 * df as f64).sqrt();
        assert!(z < 4.0, "stat {stat} df {df}");
    }

    #[test]
    fn rejected_interweave_leaves_path_untouched() {
        let (y, p) = small_problem(60, 10);
        let (_, h) = simulate_svl(&DgpSpec { params: p, len: 60, seed: 10 }).unwrap();
        let mut state = ChainState::new(p, h.values);
        let prior = PriorConfig::default();
        let mut rng = rng_from_seed(11);
        let mut rejections = 0;
        for _ in 0..200 {
            let before = state.clone();
            let acc = asis_interweave(&mut state, &y.y, &prior, 0.1, 1, &mut rng);
            if acc == 0 {
                rejections += 1;
                assert_eq!(state.h.values, before.h.values);
                assert_eq!(state.params, before.params);
            } else {
                let c = state.params.sigma / before.params.sigma;
                for (new, old) in state.h.values.iter().zip(&before.h.values) {
                    let want = state.params.mu + c * (old - before.params.mu);
                    assert!((new - want).abs() < 1e-12 * want.abs().max(1.0));
                }
            }
        }
        assert!(rejections > 0 && rejections < 200);
    }

    #[test]
    fn map_round_trip_without_move_is_identity() {
        let p = Params::new(0.95, -0.4, 0.25, -8.5).unwrap();
        let h = LatentPath::centered(vec![-8.1, -9.3, -7.77, -8.5, -10.2]);
        let back = h.to_non_centered(&p).to_centered(&p);
        for (a, b) in back.values.iter().zip(&h.values) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }

    #[test]
    fn laplace_proposal_is_exact_for_gaussian_target() {
        let mean = [0.4, -0.2, 1.0];
        let prec = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let target = |x: &[f64; 3]| {
            let d = [x[0] - mean[0], x[1] - mean[1], x[2] - mean[2]];
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += d[i] * prec[i][j] * d[j];
                }
            }
            -0.5 * q
        };
        let mut state = ChainState::new(Params::new(0.1, 0.1, 1.0, 0.0).unwrap(), vec![0.0; 2]);
        let mut rng = rng_from_seed(12);
        for _ in 0..1000 {
            laplace_mh(&mut state, [0.0; 3], &OptimizerConfig::default(), &mut rng, target);
        }
        assert!(state.counters.aux_theta.rate().unwrap() > 0.99);
        assert_eq!(state.flags, Flags::default());
    }

    #[test]
    fn laplace_acceptance_matches_quadrature_for_skewed_target() {
        // Gamma(3, 1) in log space along the first axis, standard normal on
        // the others; only the first coordinate contributes rejections.
        let a = 3.0;
        let ln_f = |u: f64| a * u - u.exp();
        let target = |x: &[f64; 3]| ln_f(x[0]) - 0.5 * (x[1] * x[1] + x[2] * x[2]);
        // Mode ln(a), curvature a.
        let (m, s) = (a.ln(), (1.0 / a).sqrt());
        let ln_q = |u: f64| -0.5 * ((u - m) / s).powi(2);

        // Stationary acceptance of the independence sampler:
        // E_{x ~ pi, x' ~ q} min(1, w(x') / w(x)), w = pi / q, on a grid.
        let k = 2000;
        let (lo, hi) = (m - 12.0 * s, m + 12.0 * s);
        let du = (hi - lo) / k as f64;
        let grid: Vec<f64> = (0..k).map(|i| lo + (i as f64 + 0.5) * du).collect();
        let pi: Vec<f64> = grid.iter().map(|&u| ln_f(u).exp()).collect();
        let q: Vec<f64> = grid.iter().map(|&u| ln_q(u).exp()).collect();
        let (zp, zq): (f64, f64) = (pi.iter().sum(), q.iter().sum());
        let mut expected = 0.0;
        for i in 0..k {
            for j in 0..k {
                let wi = pi[i] / q[i];
                let wj = pi[j] / q[j];
                expected += pi[i] / zp * q[j] / zq * (wj / wi).min(1.0);
            }
        }

        let mut state = ChainState::new(Params::new(0.0, 0.0, a.ln().exp().sqrt(), 0.0).unwrap(), vec![0.0; 2]);
        let mut rng = rng_from_seed(13);
        let n = 50_000;
        for _ in 0..n {
            laplace_mh(&mut state, [0.0; 3], &OptimizerConfig::default(), &mut rng, target);
        }
        let rate = state.counters.aux_theta.rate().unwrap();
        assert!((rate - expected).abs() < 0.02, "{rate} vs {expected}");
    }

    #[test]
    fn aux_sweep_is_deterministic() {
        let (y, _) = small_problem(100, 14);
        let table = MixtureTable::omori();
        let prior = PriorConfig::default();
        let lin = linearize(&y, DEFAULT_OFFSET).unwrap();
        let run = || {
            let mut state = ChainState::initial(&lin, &prior);
            let mut rng = rng_from_seed(15);
            for _ in 0..5 {
                aux_sweep(&mut state, &lin, &table, &prior, &OptimizerConfig::default(), &mut rng);
            }
            (state.params, state.h, state.s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_draw_gives_single_row() {
        let (y, _) = small_problem(50, 16);
        for a in Algorithm::ALL {
            let cfg = SamplerConfig { n_draws: 1, n_burnin: 0, ..SamplerConfig::new(a) };
            let out = run_chain(&y, &PriorConfig::default(), &cfg).unwrap();
            assert_eq!(out.len(), 1);
            assert!(out.sampling_seconds > 0.0);
        }
    }

    #[test]
    fn thinning_and_stored_states() {
        let (y, _) = small_problem(50, 17);
        let cfg = SamplerConfig {
            n_draws: 100,
            n_burnin: 10,
            thin: 7,
            store_h_at: vec![0, 49],
            ..SamplerConfig::new(Algorithm::RwmhC)
        };
        let out = run_chain(&y, &PriorConfig::default(), &cfg).unwrap();
        assert_eq!(out.len(), 14);
        assert_eq!(out.h_draws.len(), 14);
        assert!(out.h_draws.iter().all(|r| r.len() == 2));
        let bad = SamplerConfig { store_h_at: vec![50], ..cfg };
        assert!(run_chain(&y, &PriorConfig::default(), &bad).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let (y, _) = small_problem(80, 18);
        for a in Algorithm::ALL {
            let cfg = SamplerConfig { n_draws: 30, n_burnin: 5, seed: 99, ..SamplerConfig::new(a) };
            let x = run_chain(&y, &PriorConfig::default(), &cfg).unwrap();
            let z = run_chain(&y, &PriorConfig::default(), &cfg).unwrap();
            assert_eq!(x.draws, z.draws);
            let other = run_chain(&y, &PriorConfig::default(), &SamplerConfig { seed: 100, ..cfg }).unwrap();
            assert_ne!(x.draws, other.draws);
        }
    }

    #[test]
    fn acceptance_windows_are_never_stuck() {
        let (y, _) = small_problem(300, 19);
        for a in Algorithm::ALL {
            let cfg = SamplerConfig { n_draws: 2000, n_burnin: 500, seed: 20, ..SamplerConfig::new(a) };
            let out = run_chain(&y, &PriorConfig::default(), &cfg).unwrap();
            assert_eq!(out.windows.len(), 2);
            for w in &out.windows {
                let rates = [
                    w.counters.latent.rate(),
                    w.counters.theta_centered.rate(),
                    w.counters.theta_non_centered.rate(),
                    w.counters.aux_theta.rate(),
                ];
                for r in rates.into_iter().flatten() {
                    assert!(r > 0.0 && r < 1.0, "{a}: {w:?}");
                }
            }
            assert!(out.draws.iter().all(|r| Params::new(r[0], r[1], r[2], r[3]).is_ok()));
        }
    }
}
