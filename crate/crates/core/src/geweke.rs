//! Joint-distribution ("getting it right") tests of the samplers.
//!
//! The marginal-conditional simulator draws `(theta, h)` from the prior and
//! records it. The successive-conditional simulator draws `(theta, h, data)`
//! from the joint, then alternates a posterior sweep with a fresh draw of
//! the data given the state for a number of rounds. A sampler that leaves
//! the posterior invariant leaves the joint invariant, so both simulators
//! produce the same law of `(theta, h)`. Each replicate of the successive
//! simulator is independent, so the comparison is an ordinary two-sample
//! test on binned probability-integral transforms.
//!
//! RWMH samplers are tested on the exact model. AUX targets the auxiliary
//! mixture model, so it is tested on that model with `y*` as the data and
//! the signs `d` drawn once per replicate.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Gamma, Normal};

use crate::error::{Error, Result};
use crate::mixture::{linearize, IndicatorVector, Linearized, MixtureTable, DEFAULT_OFFSET};
use crate::model::{draw_latent_prior, draw_returns_given_latent, Params, PriorConfig, ReturnSeries};
use crate::rng::{derive_seed, rng_from_seed, SvlRng};
use crate::samplers::{sweep, Algorithm, ChainState, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeConfig {
    pub len: usize,
    /// Independent successive-conditional replicates.
    pub replicates: usize,
    /// Marginal-conditional draws per successive-conditional replicate.
    pub marginal_factor: usize,
    /// Sweep/data-redraw rounds per replicate.
    pub rounds: usize,
    pub bins: usize,
    /// Zero-based time index of the latent state under test.
    pub h_index: usize,
    pub seed: u64,
    pub prior: PriorConfig,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            len: 10,
            replicates: 20_000,
            marginal_factor: 5,
            rounds: 10,
            bins: 20,
            h_index: 4,
            seed: 0,
            prior: PriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub algorithm: Algorithm,
    pub stats: Vec<GewekeStat>,
    pub seconds: f64,
}

impl GewekeReport {
    pub fn passed(&self, alpha: f64) -> bool {
        self.stats.iter().all(|s| s.p_value > alpha)
    }

    pub fn min_p(&self) -> f64 {
        self.stats.iter().map(|s| s.p_value).fold(1.0, f64::min)
    }
}

pub const STAT_NAMES: [&str; 5] = ["phi", "rho", "sigma", "mu", "h"];

/// Maps `(theta, h_k)` to five numbers that are uniform under the prior.
struct Pit {
    phi: Beta,
    rho: Beta,
    sigma2: Gamma,
    mu: Normal,
    std: Normal,
}

impl Pit {
    fn new(prior: &PriorConfig) -> Self {
        Self {
            phi: Beta::new(prior.a_phi, prior.b_phi).expect("validated prior"),
            rho: Beta::new(prior.a_rho, prior.b_rho).expect("validated prior"),
            sigma2: Gamma::new(prior.alpha_sigma, prior.beta_sigma).expect("validated prior"),
            mu: Normal::new(prior.mu_mu, prior.sigma2_mu.sqrt()).expect("validated prior"),
            std: Normal::new(0.0, 1.0).expect("standard normal"),
        }
    }

    /// The `h` coordinate is standardized by its stationary law given theta.
    /// Under the auxiliary model this is not exactly uniform; the two-sample
    /// comparison does not need it to be.
    fn apply(&self, p: &Params, h: f64) -> [f64; 5] {
        let sd = p.sigma / (1.0 - p.phi * p.phi).sqrt();
        [
            self.phi.cdf(0.5 * (p.phi + 1.0)),
            self.rho.cdf(0.5 * (p.rho + 1.0)),
            self.sigma2.cdf(p.sigma2()),
            self.mu.cdf(p.mu),
            self.std.cdf((h - p.mu) / sd),
        ]
    }
}

/// Draw of `(ht, y*, s)` from the auxiliary mixture model given theta and signs.
pub fn simulate_aux_model<R: Rng + ?Sized>(
    p: &Params,
    d: &[f64],
    table: &MixtureTable,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>, IndicatorVector) {
    let n = d.len();
    let comps = table.components();
    let orth = (1.0 - p.rho * p.rho).sqrt();
    let mut ht = Vec::with_capacity(n);
    let mut y_star = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let z0: f64 = rng.sample(StandardNormal);
    let mut x = z0 / (1.0 - p.phi * p.phi).sqrt();
    for &dt in d {
        let j = draw_component(table, rng);
        let c = &comps[j];
        let w: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        ht.push(x);
        y_star.push(p.mu + p.sigma * x + c.m1 + c.v1 * w);
        s.push(j as u8);
        x = p.phi * x + dt * p.rho * (c.m2 + c.v2 * w) + orth * z;
    }
    (ht, y_star, IndicatorVector { s })
}

fn draw_component<R: Rng + ?Sized>(table: &MixtureTable, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, c) in table.components().iter().enumerate() {
        acc += c.prob;
        if u < acc {
            return j;
        }
    }
    table.len() - 1
}

/// Draws `y* | s, ht, theta, d` from the auxiliary model. The observation
/// noise `w_t` is correlated with the transition residual, so it is drawn
/// from its conditional law given `ht_{t+1}`.
pub fn redraw_aux_data<R: Rng + ?Sized>(
    ht: &[f64],
    s: &IndicatorVector,
    p: &Params,
    d: &[f64],
    table: &MixtureTable,
    rng: &mut R,
) -> Vec<f64> {
    let n = ht.len();
    let comps = table.components();
    let orth2 = 1.0 - p.rho * p.rho;
    (0..n)
        .map(|t| {
            let c = &comps[s.s[t] as usize];
            let z: f64 = rng.sample(StandardNormal);
            let w = if t + 1 < n {
                let b = d[t] * p.rho * c.v2;
                let resid = ht[t + 1] - p.phi * ht[t] - d[t] * p.rho * c.m2;
                let var_r = orth2 + b * b;
                b * resid / var_r + (1.0 - b * b / var_r).sqrt() * z
            } else {
                z
            };
            p.mu + p.sigma * ht[t] + c.m1 + c.v1 * w
        })
        .collect()
}

/// Two-sample chi-square homogeneity test on equal-width bins of `[0, 1]`.
pub fn two_sample_chi2(a: &[f64], b: &[f64], bins: usize) -> GewekeStat {
    let count = |xs: &[f64]| {
        let mut c = vec![0.0; bins];
        for &x in xs {
            c[((x * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        c
    };
    let (ca, cb) = (count(a), count(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let mut chi2 = 0.0;
    let mut df = 0usize;
    for (x, y) in ca.iter().zip(&cb) {
        if x + y > 0.0 {
            chi2 += (ka * x - kb * y).powi(2) / (x + y);
            df += 1;
        }
    }
    let df = df.saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(chi2);
    GewekeStat { name: String::new(), chi2, df, p_value }
}

/// One exact-model or auxiliary-model data set together with what the sweep reads.
struct Data {
    y: Vec<f64>,
    lin: Linearized,
}

fn exact_data(h: &[f64], p: &Params, rng: &mut SvlRng) -> Result<Data> {
    let y = draw_returns_given_latent(h, p, rng);
    let series = ReturnSeries::new(y, "geweke")?;
    let lin = linearize(&series, DEFAULT_OFFSET)?;
    Ok(Data { y: series.y, lin })
}

/// Runs the test with a caller-supplied sweep.
pub fn geweke_with(
    algorithm: Algorithm,
    cfg: &GewekeConfig,
    mut step: impl FnMut(&mut ChainState, &[f64], &Linearized, &mut SvlRng),
) -> Result<GewekeReport> {
    cfg.prior.validate()?;
    if cfg.len < 2 || cfg.h_index >= cfg.len || cfg.bins < 2 || cfg.replicates == 0 {
        return Err(Error::InvalidInput(format!("bad Geweke configuration {cfg:?}")));
    }
    let start = Instant::now();
    let table = MixtureTable::omori();
    let pit = Pit::new(&cfg.prior);
    let aux = algorithm == Algorithm::Aux;
    let n = cfg.len;

    let mut marginal: Vec<Vec<f64>> = vec![Vec::new(); 5];
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[0]));
    for _ in 0..cfg.replicates * cfg.marginal_factor {
        let p = cfg.prior.sample(&mut rng);
        let h = if aux {
            let d: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let (ht, _, _) = simulate_aux_model(&p, &d, &table, &mut rng);
            p.mu + p.sigma * ht[cfg.h_index]
        } else {
            draw_latent_prior(n, &p, &mut rng)[cfg.h_index]
        };
        for (k, v) in pit.apply(&p, h).into_iter().enumerate() {
            marginal[k].push(v);
        }
    }

    let mut successive: Vec<Vec<f64>> = vec![Vec::new(); 5];
    for r in 0..cfg.replicates {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[1, r as u64]));
        let p = cfg.prior.sample(&mut rng);
        let mut state;
        let mut data;
        let mut d = Vec::new();
        if aux {
            d = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let (ht, y_star, s) = simulate_aux_model(&p, &d, &table, &mut rng);
            state = ChainState::new(p, ht.iter().map(|v| p.mu + p.sigma * v).collect());
            state.s = s;
            data = Data { y: Vec::new(), lin: Linearized { y_star, d: d.clone(), offset: DEFAULT_OFFSET } };
        } else {
            let h = draw_latent_prior(n, &p, &mut rng);
            data = exact_data(&h, &p, &mut rng)?;
            state = ChainState::new(p, h);
        }
        for round in 0..cfg.rounds {
            step(&mut state, &data.y, &data.lin, &mut rng);
            if round + 1 == cfg.rounds {
                break;
            }
            let p = state.params;
            if aux {
                let ht = state.h.to_non_centered(&p).values;
                data.lin.y_star = redraw_aux_data(&ht, &state.s, &p, &d, &table, &mut rng);
            } else {
                data = exact_data(&state.h.values, &p, &mut rng)?;
            }
        }
        let h = state.h.values[cfg.h_index];
        for (k, v) in pit.apply(&state.params, h).into_iter().enumerate() {
            successive[k].push(v);
        }
    }

    let stats = STAT_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| GewekeStat {
            name: name.to_string(),
            ..two_sample_chi2(&marginal[k], &successive[k], cfg.bins)
        })
        .collect();
    Ok(GewekeReport { algorithm, stats, seconds: start.elapsed().as_secs_f64() })
}

/// Joint-distribution test of one sampler with its default settings.
pub fn geweke_test(algorithm: Algorithm, cfg: &GewekeConfig) -> Result<GewekeReport> {
    let table = MixtureTable::omori();
    let sampler = SamplerConfig::new(algorithm);
    let prior = cfg.prior;
    geweke_with(algorithm, cfg, |state, y, lin, rng| {
        sweep(state, y, lin, &table, &prior, &sampler, rng);
    })
}
