//! Kalman filtering and simulation smoothing for the conditionally Gaussian
//! state space obtained by fixing the mixture indicators.
//!
//! The model has a scalar state and correlated noises:
//!
//! ```text
//! y_t     = c_t + z_t x_t + e_t,        Var e_t = H_t^2
//! x_{t+1} = phi x_t + g_t + u_t,        Var u_t = W_t^2,  Cov(e_t, u_t) = C_t
//! x_1 ~ N(a_1, P_1)
//! ```
//!
//! The filter carries, alongside the state mean, its sensitivity to an
//! additive observation level `mu` (the augmented constant state). Innovations
//! are therefore affine in `mu`, which yields both the Gaussian full
//! conditional of `mu` and the likelihood with `mu` integrated out from one
//! pass.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mixture::{IndicatorVector, Linearized, MixtureTable};
use crate::model::{LatentPath, Params, PriorConfig, LN_2PI};

/// Predicted variances below this are treated as a breakdown rather than rounding.
const VARIANCE_TOLERANCE: f64 = 1e-10;

/// Explicit per-time system matrices of the conditionally Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct CondGaussSSM {
    pub obs_intercept: Vec<f64>,
    pub obs_loading: Vec<f64>,
    pub obs_sd: Vec<f64>,
    pub state_intercept: Vec<f64>,
    pub transition: f64,
    pub state_sd: Vec<f64>,
    pub cross_cov: Vec<f64>,
    pub init_mean: f64,
    pub init_var: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    c: f64,
    z: f64,
    obs_var: f64,
    g: f64,
    state_var: f64,
    cross: f64,
}

pub(crate) trait StateSpace {
    fn len(&self) -> usize;
    fn transition(&self) -> f64;
    fn init(&self) -> (f64, f64);
    fn step(&self, t: usize) -> Step;
}

impl CondGaussSSM {
    pub fn len(&self) -> usize {
        self.obs_intercept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_intercept.is_empty()
    }
}

impl StateSpace for CondGaussSSM {
    fn len(&self) -> usize {
        self.obs_intercept.len()
    }

    fn transition(&self) -> f64 {
        self.transition
    }

    fn init(&self) -> (f64, f64) {
        (self.init_mean, self.init_var)
    }

    #[inline]
    fn step(&self, t: usize) -> Step {
        Step {
            c: self.obs_intercept[t],
            z: self.obs_loading[t],
            obs_var: self.obs_sd[t] * self.obs_sd[t],
            g: self.state_intercept[t],
            state_var: self.state_sd[t] * self.state_sd[t],
            cross: self.cross_cov[t],
        }
    }
}

/// The auxiliary mixture model read directly from its inputs, without
/// materializing the system vectors.
pub(crate) struct AuxModel<'a> {
    lin: &'a Linearized,
    s: &'a IndicatorVector,
    table: &'a MixtureTable,
    phi: f64,
    rho: f64,
    sigma: f64,
    mu: f64,
}

impl<'a> AuxModel<'a> {
    pub(crate) fn new(
        lin: &'a Linearized,
        s: &'a IndicatorVector,
        table: &'a MixtureTable,
        p: &Params,
    ) -> Self {
        Self {
            lin,
            s,
            table,
            phi: p.phi,
            rho: p.rho,
            sigma: p.sigma,
            mu: p.mu,
        }
    }
}

impl StateSpace for AuxModel<'_> {
    fn len(&self) -> usize {
        self.lin.len()
    }

    fn transition(&self) -> f64 {
        self.phi
    }

    fn init(&self) -> (f64, f64) {
        (0.0, 1.0 / (1.0 - self.phi * self.phi))
    }

    #[inline]
    fn step(&self, t: usize) -> Step {
        let c = self.table.components()[self.s.s[t] as usize];
        let drho = self.lin.d[t] * self.rho;
        Step {
            c: self.mu + c.m1,
            z: self.sigma,
            obs_var: c.v1 * c.v1,
            g: drho * c.m2,
            state_var: 1.0 - self.rho * self.rho + drho * drho * c.v2 * c.v2,
            cross: drho * c.v1 * c.v2,
        }
    }
}

/// Builds the explicit state space of the auxiliary model for fixed indicators.
pub fn assemble_ssm(
    lin: &Linearized,
    s: &IndicatorVector,
    p: &Params,
    table: &MixtureTable,
) -> CondGaussSSM {
    let view = AuxModel::new(lin, s, table, p);
    let n = lin.len();
    let mut m = CondGaussSSM {
        obs_intercept: Vec::with_capacity(n),
        obs_loading: Vec::with_capacity(n),
        obs_sd: Vec::with_capacity(n),
        state_intercept: Vec::with_capacity(n),
        transition: p.phi,
        state_sd: Vec::with_capacity(n),
        cross_cov: Vec::with_capacity(n),
        init_mean: 0.0,
        init_var: 1.0 / (1.0 - p.phi * p.phi),
    };
    for t in 0..n {
        let k = view.step(t);
        m.obs_intercept.push(k.c);
        m.obs_loading.push(k.z);
        m.obs_sd.push(k.obs_var.sqrt());
        m.state_intercept.push(k.g);
        m.state_sd.push(k.state_var.sqrt());
        m.cross_cov.push(k.cross);
    }
    m
}

/// Per-time filter output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub predicted_mean: f64,
    pub predicted_var: f64,
    pub filtered_mean: f64,
    pub filtered_var: f64,
    pub innovation: f64,
    pub innovation_var: f64,
    /// Derivative of the innovation with respect to an added observation level.
    pub level_loading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub steps: Vec<FilterStep>,
    pub loglik: f64,
}

/// Sufficient statistics of one filter pass for an additive level `mu`:
/// the log-likelihood is `-0.5 (n log 2pi + sum_ln_f + s_vv - 2 mu s_vx + mu^2 s_xx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LevelStats {
    n: usize,
    sum_ln_f: f64,
    s_vv: f64,
    s_vx: f64,
    s_xx: f64,
}

impl LevelStats {
    fn loglik_at_zero(&self) -> f64 {
        -0.5 * (self.n as f64 * LN_2PI + self.sum_ln_f + self.s_vv)
    }
}

fn run_filter<M: StateSpace>(
    m: &M,
    y: &[f64],
    mut record: impl FnMut(usize, &FilterStep),
) -> Result<LevelStats> {
    let n = m.len();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "observation length {} does not match model length {n}",
            y.len()
        )));
    }
    let phi = m.transition();
    let (mut a, mut p) = m.init();
    let mut level = 0.0;
    let mut stats = LevelStats {
        n,
        sum_ln_f: 0.0,
        s_vv: 0.0,
        s_vx: 0.0,
        s_xx: 0.0,
    };
    for t in 0..n {
        let k = m.step(t);
        let v = y[t] - k.c - k.z * a;
        let x = 1.0 + k.z * level;
        let zp = k.z * p;
        let f = k.z * zp + k.obs_var;
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::FilterBreakdown { t, variance: f });
        }
        let f_inv = 1.0 / f;
        stats.sum_ln_f += f.ln();
        stats.s_vv += v * v * f_inv;
        stats.s_vx += v * x * f_inv;
        stats.s_xx += x * x * f_inv;
        record(
            t,
            &FilterStep {
                predicted_mean: a,
                predicted_var: p,
                filtered_mean: a + zp * v * f_inv,
                filtered_var: (p - zp * zp * f_inv).max(0.0),
                innovation: v,
                innovation_var: f,
                level_loading: x,
            },
        );
        if t + 1 < n {
            let gain = (phi * zp + k.cross) * f_inv;
            a = phi * a + k.g + gain * v;
            level = phi * level - gain * x;
            p = phi * phi * p + k.state_var - gain * gain * f;
            if p < 0.0 {
                if p < -VARIANCE_TOLERANCE {
                    return Err(Error::FilterBreakdown { t: t + 1, variance: p });
                }
                p = 0.0;
            }
        }
    }
    Ok(stats)
}

/// Runs the filter and returns the exact Gaussian log-likelihood of `y_star`.
pub fn kalman_loglik(m: &CondGaussSSM, y_star: &[f64]) -> Result<FilterResult> {
    let mut steps = Vec::with_capacity(m.len());
    let stats = run_filter(m, y_star, |_, s| steps.push(*s))?;
    Ok(FilterResult {
        steps,
        loglik: stats.loglik_at_zero(),
    })
}

fn ffbs<M: StateSpace, R: Rng + ?Sized>(m: &M, y: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let n = m.len();
    let mut filt = Vec::with_capacity(n);
    run_filter(m, y, |_, s| filt.push((s.filtered_mean, s.filtered_var)))?;
    let phi = m.transition();
    let mut x = vec![0.0; n];
    let (af, pf) = filt[n - 1];
    let z: f64 = rng.sample(StandardNormal);
    x[n - 1] = af + pf.sqrt() * z;
    for t in (0..n - 1).rev() {
        let k = m.step(t);
        let (af, pf) = filt[t];
        // Law of x_{t+1} given x_t and y_t: regress u_t on the observation noise.
        let (phi_c, g_c, q_c) = if k.obs_var > 0.0 {
            let r = k.cross / k.obs_var;
            (phi - r * k.z, k.g + r * (y[t] - k.c), k.state_var - r * k.cross)
        } else {
            (phi, k.g, k.state_var)
        };
        let q_c = if q_c < 0.0 {
            if q_c < -VARIANCE_TOLERANCE {
                return Err(Error::FilterBreakdown { t, variance: q_c });
            }
            0.0
        } else {
            q_c
        };
        let denom = phi_c * phi_c * pf + q_c;
        let (mean, var) = if denom > 0.0 {
            let gain = pf * phi_c / denom;
            (af + gain * (x[t + 1] - phi_c * af - g_c), (pf - gain * phi_c * pf).max(0.0))
        } else {
            (af, 0.0)
        };
        let z: f64 = rng.sample(StandardNormal);
        x[t] = mean + var.sqrt() * z;
    }
    Ok(x)
}

/// Draws the whole state path from `p(x | y_star)` by forward filtering,
/// backward sampling.
pub fn simulation_smoother<R: Rng + ?Sized>(
    m: &CondGaussSSM,
    y_star: &[f64],
    rng: &mut R,
) -> Result<LatentPath> {
    Ok(LatentPath::non_centered(ffbs(m, y_star, rng)?))
}

/// FFBS draw of `ht | y*, s, theta` straight from the auxiliary model.
pub(crate) fn smooth_aux<R: Rng + ?Sized>(
    lin: &Linearized,
    s: &IndicatorVector,
    p: &Params,
    table: &MixtureTable,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ffbs(&AuxModel::new(lin, s, table, p), &lin.y_star, rng)
}

fn level_stats(
    lin: &Linearized,
    s: &IndicatorVector,
    phi: f64,
    rho: f64,
    sigma: f64,
    table: &MixtureTable,
) -> Result<LevelStats> {
    let p = Params {
        phi,
        rho,
        sigma,
        mu: 0.0,
    };
    run_filter(&AuxModel::new(lin, s, table, &p), &lin.y_star, |_, _| {})
}

/// Mean and variance of `mu | y*, s, phi, rho, sigma` with the path integrated out.
pub fn mu_posterior(
    lin: &Linearized,
    s: &IndicatorVector,
    phi: f64,
    rho: f64,
    sigma: f64,
    cfg: &PriorConfig,
    table: &MixtureTable,
) -> Result<(f64, f64)> {
    let st = level_stats(lin, s, phi, rho, sigma, table)?;
    let precision = st.s_xx + 1.0 / cfg.sigma2_mu;
    let mean = (st.s_vx + cfg.mu_mu / cfg.sigma2_mu) / precision;
    Ok((mean, 1.0 / precision))
}

/// Exact draw from the Gaussian full conditional of `mu` given the indicators.
#[allow(clippy::too_many_arguments)]
pub fn draw_mu_conjugate<R: Rng + ?Sized>(
    lin: &Linearized,
    s: &IndicatorVector,
    phi: f64,
    rho: f64,
    sigma: f64,
    cfg: &PriorConfig,
    table: &MixtureTable,
    rng: &mut R,
) -> Result<f64> {
    let (mean, var) = mu_posterior(lin, s, phi, rho, sigma, cfg, table)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + var.sqrt() * z)
}

/// `log p(y* | s, phi, rho, sigma)` with both the path and `mu` integrated out.
pub fn collapsed_loglik(
    lin: &Linearized,
    s: &IndicatorVector,
    phi: f64,
    rho: f64,
    sigma: f64,
    cfg: &PriorConfig,
    table: &MixtureTable,
) -> Result<f64> {
    let st = level_stats(lin, s, phi, rho, sigma, table)?;
    let prior_prec = 1.0 / cfg.sigma2_mu;
    let precision = st.s_xx + prior_prec;
    let mean = (st.s_vx + cfg.mu_mu * prior_prec) / precision;
    // Minimum of the quadratic form, written to avoid cancellation when the
    // prior variance is tiny.
    let shift = (st.s_vx - cfg.mu_mu * st.s_xx) / precision;
    let quad = st.s_vv - 2.0 * mean * st.s_vx + mean * mean * st.s_xx + shift * shift * prior_prec;
    Ok(st.loglik_at_zero() + 0.5 * (st.s_vv - quad) - 0.5 * (cfg.sigma2_mu * precision).ln())
}
