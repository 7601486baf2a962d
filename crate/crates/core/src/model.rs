//! The stochastic volatility model with leverage.
//!
//! Centered form:
//!
//! ```text
//! y_t     = exp(h_t / 2) eps_t
//! h_{t+1} = mu + phi (h_t - mu) + sigma eta_t
//! cor(eps_t, eta_t) = rho,   h_1 ~ N(mu, sigma^2 / (1 - phi^2))
//! ```
//!
//! The non-centered form uses `ht_t = (h_t - mu) / sigma`, which follows a
//! zero-mean AR(1) with unit innovation variance.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SvlRng};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The parameter vector `(phi, rho, sigma, mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub phi: f64,
    pub rho: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl Params {
    pub fn new(phi: f64, rho: f64, sigma: f64, mu: f64) -> Result<Self> {
        let p = Self { phi, rho, sigma, mu };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidParams(format!(
                "need |phi| < 1, |rho| < 1, sigma > 0, all finite; got {p:?}"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.phi.is_finite()
            && self.rho.is_finite()
            && self.sigma.is_finite()
            && self.mu.is_finite()
            && self.phi.abs() < 1.0
            && self.rho.abs() < 1.0
            && self.sigma > 0.0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.phi, self.rho, self.sigma, self.mu]
    }
}

/// Parameters mapped to R^4: Fisher-z of `phi` and `rho`, `log(sigma^2)`, `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams {
    pub z_phi: f64,
    pub z_rho: f64,
    pub log_sigma2: f64,
    pub mu: f64,
}

impl TransformedParams {
    pub fn as_array(&self) -> [f64; 4] {
        [self.z_phi, self.z_rho, self.log_sigma2, self.mu]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            z_phi: a[0],
            z_rho: a[1],
            log_sigma2: a[2],
            mu: a[3],
        }
    }
}

pub fn to_transformed(p: &Params) -> TransformedParams {
    TransformedParams {
        z_phi: p.phi.atanh(),
        z_rho: p.rho.atanh(),
        log_sigma2: 2.0 * p.sigma.ln(),
        mu: p.mu,
    }
}

pub fn from_transformed(t: &TransformedParams) -> Params {
    Params {
        phi: t.z_phi.tanh(),
        rho: t.z_rho.tanh(),
        sigma: (0.5 * t.log_sigma2).exp(),
        mu: t.mu,
    }
}

/// `log |d(phi, rho, sigma^2) / d(z_phi, z_rho, log sigma^2)|`.
pub fn log_jacobian(t: &TransformedParams) -> f64 {
    log_one_minus_tanh2(t.z_phi) + log_one_minus_tanh2(t.z_rho) + t.log_sigma2
}

/// `log(1 - tanh(z)^2) = log 4 - 2 |z| - 2 log(1 + exp(-2|z|))`, stable for large `|z|`.
fn log_one_minus_tanh2(z: f64) -> f64 {
    let a = z.abs();
    2.0 * LN_2 - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p()
}

/// Which form the latent log-volatility path is stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    Centered,
    NonCentered,
}

/// A de-meaned return series.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub y: Vec<f64>,
    pub label: String,
}

impl ReturnSeries {
    pub fn new(y: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::TooShort { len: y.len(), min: 2 });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "return at index {i} is not finite"
            )));
        }
        Ok(Self {
            y,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The log-volatility path, centered (`h`) or non-centered (`ht`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub values: Vec<f64>,
    pub parameterization: Parameterization,
}

impl LatentPath {
    pub fn centered(values: Vec<f64>) -> Self {
        Self {
            values,
            parameterization: Parameterization::Centered,
        }
    }

    pub fn non_centered(values: Vec<f64>) -> Self {
        Self {
            values,
            parameterization: Parameterization::NonCentered,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns the path in centered form under `p`.
    pub fn to_centered(&self, p: &Params) -> LatentPath {
        match self.parameterization {
            Parameterization::Centered => self.clone(),
            Parameterization::NonCentered => LatentPath::centered(
                self.values.iter().map(|&v| p.mu + p.sigma * v).collect(),
            ),
        }
    }

    /// Returns the path in non-centered form under `p`.
    pub fn to_non_centered(&self, p: &Params) -> LatentPath {
        match self.parameterization {
            Parameterization::NonCentered => self.clone(),
            Parameterization::Centered => LatentPath::non_centered(
                self.values.iter().map(|&v| (v - p.mu) / p.sigma).collect(),
            ),
        }
    }
}

/// Prior hyperparameters.
///
/// `(phi + 1) / 2 ~ Beta(a_phi, b_phi)`, `(rho + 1) / 2 ~ Beta(a_rho, b_rho)`,
/// `sigma^2 ~ Gamma(alpha_sigma, rate = beta_sigma)`, `mu ~ N(mu_mu, sigma2_mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub a_phi: f64,
    pub b_phi: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub alpha_sigma: f64,
    pub beta_sigma: f64,
    pub mu_mu: f64,
    pub sigma2_mu: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a_phi: 20.0,
            b_phi: 1.5,
            a_rho: 3.0,
            b_rho: 6.0,
            alpha_sigma: 0.5,
            beta_sigma: 0.5,
            mu_mu: -10.0,
            sigma2_mu: 100.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("alpha_sigma", self.alpha_sigma),
            ("beta_sigma", self.beta_sigma),
            ("sigma2_mu", self.sigma2_mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.mu_mu.is_finite() {
            return Err(Error::InvalidParams("mu_mu must be finite".into()));
        }
        Ok(())
    }

    /// Prior means, used as the chain's starting point.
    pub fn mean_params(&self) -> Params {
        Params {
            phi: 2.0 * self.a_phi / (self.a_phi + self.b_phi) - 1.0,
            rho: 2.0 * self.a_rho / (self.a_rho + self.b_rho) - 1.0,
            sigma: (self.alpha_sigma / self.beta_sigma).sqrt(),
            mu: self.mu_mu,
        }
    }

    /// Draws `theta` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        let beta_phi = Beta::new(self.a_phi, self.b_phi).expect("validated prior");
        let beta_rho = Beta::new(self.a_rho, self.b_rho).expect("validated prior");
        let gamma = Gamma::new(self.alpha_sigma, 1.0 / self.beta_sigma).expect("validated prior");
        // Guard against draws that round to the boundary.
        let bound = |x: f64| x.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let phi = bound(2.0 * beta_phi.sample(rng) - 1.0);
        let rho = bound(2.0 * beta_rho.sample(rng) - 1.0);
        let sigma = gamma.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        Params {
            phi,
            rho,
            sigma,
            mu: self.mu_mu + self.sigma2_mu.sqrt() * z,
        }
    }
}

fn ln_beta_density_on_pm1(x: f64, a: f64, b: f64) -> f64 {
    // density of x in (-1, 1) when (x + 1) / 2 ~ Beta(a, b)
    let u = 0.5 * (x + 1.0);
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - ln_beta(a, b) - LN_2
}

/// Log prior density of `(phi, rho, sigma^2, mu)` in the natural parameterization.
pub fn log_prior(p: &Params, cfg: &PriorConfig) -> f64 {
    log_prior_phi_rho_sigma(p, cfg) + log_prior_mu(p.mu, cfg)
}

/// The `phi`, `rho` and `sigma^2` parts of [`log_prior`].
pub fn log_prior_phi_rho_sigma(p: &Params, cfg: &PriorConfig) -> f64 {
    ln_beta_density_on_pm1(p.phi, cfg.a_phi, cfg.b_phi)
        + ln_beta_density_on_pm1(p.rho, cfg.a_rho, cfg.b_rho)
        + ln_gamma_pdf(p.sigma2(), cfg.alpha_sigma, cfg.beta_sigma)
}

pub fn log_prior_mu(mu: f64, cfg: &PriorConfig) -> f64 {
    let d = mu - cfg.mu_mu;
    -0.5 * (LN_2PI + cfg.sigma2_mu.ln() + d * d / cfg.sigma2_mu)
}

pub(crate) fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// `y * exp(-h / 2)`, defined as zero for zero returns so that extreme `h`
/// cannot produce `0 * inf`.
#[inline]
fn standardized(y: f64, h: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y * (-0.5 * h).exp()
    }
}

/// Joint log-density `log p(y, h | theta)` for `h_t = shift + scale * base_t`.
fn log_joint_affine(base: &[f64], shift: f64, scale: f64, y: &[f64], p: &Params) -> f64 {
    debug_assert_eq!(base.len(), y.len());
    let n = y.len();
    let s2 = p.sigma2();
    let cond_var = s2 * (1.0 - p.rho * p.rho);
    let init_var = s2 / (1.0 - p.phi * p.phi);
    if !(cond_var > 0.0 && init_var > 0.0 && cond_var.is_finite() && init_var.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let ln_cond_var = cond_var.ln();
    let leverage = p.rho * p.sigma;

    let mut h_prev = shift + scale * base[0];
    let mut lp = ln_normal_pdf(h_prev, p.mu, init_var);
    for t in 0..n {
        let eps = standardized(y[t], h_prev);
        lp -= 0.5 * (LN_2PI + h_prev + eps * eps);
        if t + 1 < n {
            let h_next = shift + scale * base[t + 1];
            let mean = p.mu + p.phi * (h_prev - p.mu) + leverage * eps;
            let d = h_next - mean;
            lp -= 0.5 * (LN_2PI + ln_cond_var + d * d / cond_var);
            h_prev = h_next;
        }
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Complete joint log-density `log p(y, h | theta)` of the centered model.
///
/// The pair `(eps_t, eta_t)` is factorized as `p(y_t | h_t) p(h_{t+1} | h_t, y_t)`;
/// the last time point contributes only its observation density.
pub fn log_joint_centered(h: &[f64], y: &[f64], p: &Params) -> f64 {
    log_joint_affine(h, 0.0, 1.0, y, p)
}

/// Joint log-density `log p(y, ht | theta)` of the non-centered model.
pub fn log_joint_non_centered(ht: &[f64], y: &[f64], p: &Params) -> f64 {
    log_joint_affine(ht, p.mu, p.sigma, y, p) + ht.len() as f64 * p.sigma.ln()
}

/// `log p_C(h | y, theta)` up to a constant free of `h`.
pub fn log_posterior_h_centered(h: &LatentPath, y: &ReturnSeries, p: &Params) -> f64 {
    match h.parameterization {
        Parameterization::Centered => log_joint_centered(&h.values, &y.y, p),
        Parameterization::NonCentered => log_joint_affine(&h.values, p.mu, p.sigma, &y.y, p),
    }
}

/// Data-generating process: parameters, series length and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub params: Params,
    pub len: usize,
    pub seed: u64,
}

/// Simulates returns and the centered log-volatility path.
pub fn simulate_svl(spec: &DgpSpec) -> Result<(ReturnSeries, LatentPath)> {
    if !spec.params.is_valid() {
        return Err(Error::InvalidParams(format!("{:?}", spec.params)));
    }
    if spec.len < 2 {
        return Err(Error::TooShort { len: spec.len, min: 2 });
    }
    let mut rng = rng_from_seed(spec.seed);
    let (y, h) = simulate_with_rng(&spec.params, spec.len, &mut rng);
    let label = format!(
        "svl phi={} rho={} sigma={} mu={} T={} seed={}",
        spec.params.phi, spec.params.rho, spec.params.sigma, spec.params.mu, spec.len, spec.seed
    );
    Ok((ReturnSeries { y, label }, LatentPath::centered(h)))
}

/// Simulation core shared with the validation harness. Per time point the
/// draws are `eps_t` and then an independent normal for `eta_t`.
pub(crate) fn simulate_with_rng(p: &Params, n: usize, rng: &mut SvlRng) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let sd0 = p.sigma / (1.0 - p.phi * p.phi).sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let mut h_t = p.mu + sd0 * z0;
    let orth = (1.0 - p.rho * p.rho).sqrt();
    for _ in 0..n {
        let eps: f64 = rng.sample(StandardNormal);
        let zeta: f64 = rng.sample(StandardNormal);
        let eta = p.rho * eps + orth * zeta;
        h.push(h_t);
        y.push((0.5 * h_t).exp() * eps);
        h_t = p.mu + p.phi * (h_t - p.mu) + p.sigma * eta;
    }
    (y, h)
}

/// Draws `y | h, theta` from the centered model.
pub fn draw_returns_given_latent<R: Rng + ?Sized>(h: &[f64], p: &Params, rng: &mut R) -> Vec<f64> {
    let n = h.len();
    let orth = (1.0 - p.rho * p.rho).sqrt();
    (0..n)
        .map(|t| {
            let z: f64 = rng.sample(StandardNormal);
            let eps = if t + 1 < n {
                let eta = (h[t + 1] - p.mu - p.phi * (h[t] - p.mu)) / p.sigma;
                p.rho * eta + orth * z
            } else {
                z
            };
            (0.5 * h[t]).exp() * eps
        })
        .collect()
}

/// Draws a centered path `h | theta` from its stationary AR(1) prior.
pub fn draw_latent_prior<R: Rng + ?Sized>(n: usize, p: &Params, rng: &mut R) -> Vec<f64> {
    let mut h = Vec::with_capacity(n);
    let z0: f64 = rng.sample(StandardNormal);
    let mut h_t = p.mu + p.sigma / (1.0 - p.phi * p.phi).sqrt() * z0;
    for _ in 0..n {
        h.push(h_t);
        let z: f64 = rng.sample(StandardNormal);
        h_t = p.mu + p.phi * (h_t - p.mu) + p.sigma * z;
    }
    h
}

pub(crate) fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}
