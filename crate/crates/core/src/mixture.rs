//! Ten-component Gaussian mixture approximation of the linearized model.
//!
//! With `y*_t = log(y_t^2)` and `d_t = sgn(y_t)`, the non-centered model is
//! approximated, conditionally on a component indicator `s_t`, by
//!
//! ```text
//! y*_t      = mu + sigma ht_t + m1[s_t] + v1[s_t] w_t
//! ht_{t+1}  = phi ht_t + sqrt(1 - rho^2) z_t + d_t rho (m2[s_t] + v2[s_t] w_t)
//! ```
//!
//! The constants are those of Omori, Chib, Shephard and Nakajima (2007),
//! Table 1, with `m2 = a exp(m / 2)` and `v2 = b v exp(m / 2)` so that the
//! coupling term reproduces their conditional mean of `eta_t` given
//! `log eps_t^2`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ln_normal_pdf, LatentPath, Params, ReturnSeries, LN_2PI};

/// Default offset added to `y_t^2` before taking logs.
pub const DEFAULT_OFFSET: f64 = 1e-10;

// (p, m, v^2, a, b) from Omori et al. (2007), Table 1.
const OMORI_2007: [[f64; 5]; 10] = [
    [0.00609, 1.92677, 0.11265, 1.01418, 0.50710],
    [0.04775, 1.34744, 0.17788, 1.02248, 0.51124],
    [0.13057, 0.73504, 0.26768, 1.03403, 0.51701],
    [0.20674, 0.02266, 0.40611, 1.05207, 0.52604],
    [0.22715, -0.85173, 0.62699, 1.08153, 0.54076],
    [0.18842, -1.97278, 0.98583, 1.13114, 0.56557],
    [0.12047, -3.46788, 1.57469, 1.21754, 0.60877],
    [0.05591, -5.55246, 2.54498, 1.37454, 0.68728],
    [0.01575, -8.68384, 4.16591, 1.68327, 0.84163],
    [0.00115, -14.65000, 7.33342, 2.50097, 1.25049],
];

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub prob: f64,
    /// Mean of the `log eps^2` part.
    pub m1: f64,
    /// Standard deviation of the `log eps^2` part.
    pub v1: f64,
    /// Mean of the `eta` coupling.
    pub m2: f64,
    /// Scale of the shared noise in the `eta` coupling.
    pub v2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    components: Vec<Component>,
    ln_prob: Vec<f64>,
    ln_v1: Vec<f64>,
}

impl MixtureTable {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() || components.len() > u8::MAX as usize {
            return Err(Error::InvalidInput("mixture needs 1..=255 components".into()));
        }
        let total: f64 = components.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        for c in &components {
            let ok = c.prob > 0.0
                && c.v1 > 0.0
                && c.v1.is_finite()
                && c.v2.is_finite()
                && c.m1.is_finite()
                && c.m2.is_finite();
            if !ok {
                return Err(Error::InvalidInput(format!("invalid component {c:?}")));
            }
        }
        Ok(Self {
            ln_prob: components.iter().map(|c| c.prob.ln()).collect(),
            ln_v1: components.iter().map(|c| c.v1.ln()).collect(),
            components,
        })
    }

    /// The ten-component table of Omori et al. (2007).
    pub fn omori() -> Self {
        let comps = OMORI_2007
            .iter()
            .map(|&[p, m, v2, a, b]| {
                let v = v2.sqrt();
                let scale = (0.5 * m).exp();
                Component {
                    prob: p,
                    m1: m,
                    v1: v,
                    m2: a * scale,
                    v2: b * v * scale,
                }
            })
            .collect();
        Self::new(comps).expect("embedded mixture table is valid")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mean_log_eps2(&self) -> f64 {
        self.components.iter().map(|c| c.prob * c.m1).sum()
    }

    pub fn var_log_eps2(&self) -> f64 {
        let m = self.mean_log_eps2();
        self.components
            .iter()
            .map(|c| c.prob * (c.v1 * c.v1 + c.m1 * c.m1))
            .sum::<f64>()
            - m * m
    }

    /// Log component weights (unnormalized posterior) for one time point.
    ///
    /// `obs_resid = y*_t - mu - sigma ht_t`; `trans_resid` is
    /// `ht_{t+1} - phi ht_t`, or `None` at the last time point.
    #[inline]
    pub(crate) fn log_weights(
        &self,
        obs_resid: f64,
        trans_resid: Option<f64>,
        d: f64,
        rho: f64,
        out: &mut [f64],
    ) {
        match trans_resid {
            Some(r2) => {
                let orth_var = 1.0 - rho * rho;
                let ln_norm = -LN_2PI - 0.5 * orth_var.ln();
                let drho = d * rho;
                for (j, c) in self.components.iter().enumerate() {
                    let w = (obs_resid - c.m1) / c.v1;
                    let e = r2 - drho * (c.m2 + c.v2 * w);
                    out[j] = self.ln_prob[j] - self.ln_v1[j] + ln_norm
                        - 0.5 * (w * w + e * e / orth_var);
                }
            }
            None => {
                for (j, c) in self.components.iter().enumerate() {
                    let w = (obs_resid - c.m1) / c.v1;
                    out[j] = self.ln_prob[j] - self.ln_v1[j] - 0.5 * (LN_2PI + w * w);
                }
            }
        }
    }
}

/// The log-squared linearization of a return series.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub y_star: Vec<f64>,
    /// Signs of the returns, `+1` for zero returns.
    pub d: Vec<f64>,
    pub offset: f64,
}

impl Linearized {
    pub fn len(&self) -> usize {
        self.y_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_star.is_empty()
    }
}

pub fn linearize(y: &ReturnSeries, offset: f64) -> Result<Linearized> {
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::InvalidInput(format!("offset must be > 0, got {offset}")));
    }
    Ok(Linearized {
        y_star: y.y.iter().map(|v| (v * v + offset).ln()).collect(),
        d: y.y.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect(),
        offset,
    })
}

/// Mixture component indices, one per time point (zero-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorVector {
    pub s: Vec<u8>,
}

impl IndicatorVector {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

fn non_centered<'a>(h: &'a LatentPath, p: &Params) -> std::borrow::Cow<'a, [f64]> {
    match h.parameterization {
        crate::model::Parameterization::NonCentered => std::borrow::Cow::Borrowed(&h.values),
        crate::model::Parameterization::Centered => {
            std::borrow::Cow::Owned(h.to_non_centered(p).values)
        }
    }
}

/// Posterior component probabilities at every time point, row-major `T x K`.
pub fn indicator_probabilities(
    lin: &Linearized,
    h: &LatentPath,
    p: &Params,
    table: &MixtureTable,
) -> Vec<f64> {
    let ht = non_centered(h, p);
    let k = table.len();
    let n = lin.len();
    let mut out = vec![0.0; n * k];
    for t in 0..n {
        let row = &mut out[t * k..(t + 1) * k];
        fill_log_weights(lin, &ht, p, table, t, row);
        normalize_log_weights(row, table);
    }
    out
}

#[inline]
fn fill_log_weights(
    lin: &Linearized,
    ht: &[f64],
    p: &Params,
    table: &MixtureTable,
    t: usize,
    row: &mut [f64],
) {
    let obs = lin.y_star[t] - p.mu - p.sigma * ht[t];
    let trans = (t + 1 < ht.len()).then(|| ht[t + 1] - p.phi * ht[t]);
    table.log_weights(obs, trans, lin.d[t], p.rho, row);
}

/// Exponentiates log weights in place after subtracting their maximum and
/// returns their log-sum. Falls back to the prior weights when nothing is
/// finite.
fn normalize_log_weights(row: &mut [f64], table: &MixtureTable) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        for (w, c) in row.iter_mut().zip(table.components()) {
            *w = c.prob;
        }
        return max;
    }
    let mut total = 0.0;
    for w in row.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in row.iter_mut() {
        *w /= total;
    }
    max + total.ln()
}

/// Draws `s | y*, ht, theta` independently across time by inverse transform sampling.
pub fn sample_indicators<R: Rng + ?Sized>(
    lin: &Linearized,
    h: &LatentPath,
    p: &Params,
    table: &MixtureTable,
    rng: &mut R,
) -> IndicatorVector {
    sample_indicators_with_density(lin, h, p, table, rng).0
}

/// Indicator draw together with `aux_log_density_marginal` at the same path,
/// which falls out of the same per-time weights.
pub(crate) fn sample_indicators_with_density<R: Rng + ?Sized>(
    lin: &Linearized,
    h: &LatentPath,
    p: &Params,
    table: &MixtureTable,
    rng: &mut R,
) -> (IndicatorVector, f64) {
    let ht = non_centered(h, p);
    let k = table.len();
    let mut row = vec![0.0; k];
    let mut log_density = ln_normal_pdf(ht[0], 0.0, 1.0 / (1.0 - p.phi * p.phi));
    let s = (0..lin.len())
        .map(|t| {
            fill_log_weights(lin, &ht, p, table, t, &mut row);
            log_density += normalize_log_weights(&mut row, table);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, w) in row.iter().enumerate() {
                acc += w;
                if u < acc {
                    return j as u8;
                }
            }
            // u landed in the rounding gap above the cumulative sum
            row.iter().rposition(|&w| w > 0.0).unwrap_or(k - 1) as u8
        })
        .collect();
    if log_density.is_nan() {
        log_density = f64::NEG_INFINITY;
    }
    (IndicatorVector { s }, log_density)
}

#[inline]
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log p_A(ht, y* | theta)` with the indicators summed out, including the
/// stationary initial law of `ht_1`. As a function of the latent path this is
/// the auxiliary-model posterior up to a constant.
pub fn aux_log_density_marginal(
    h: &LatentPath,
    lin: &Linearized,
    p: &Params,
    table: &MixtureTable,
) -> f64 {
    let ht = non_centered(h, p);
    let mut row = vec![0.0; table.len()];
    let mut total = ln_normal_pdf(ht[0], 0.0, 1.0 / (1.0 - p.phi * p.phi));
    for t in 0..lin.len() {
        fill_log_weights(lin, &ht, p, table, t, &mut row);
        total += log_sum_exp(&row);
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}
