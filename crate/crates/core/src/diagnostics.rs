//! Autocorrelation, effective sample size, inefficiency factors, effective
//! sampling rates and posterior summaries.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{ChainOutput, PARAM_NAMES};

/// Minimum series length accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 10;

/// Default truncation lag `min(n - 2, 10 sqrt(n))`.
pub fn default_max_lag(n: usize) -> usize {
    n.saturating_sub(2).min((10.0 * (n as f64).sqrt()) as usize)
}

/// Biased (divide-by-n) sample autocorrelations at lags `0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < max_lag + 2 {
        return Err(Error::TooShort { len: n, min: max_lag + 2 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in series".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    // relative to the sum of squares, a constant series leaves only rounding
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(c0 > 1e-24 * scale) {
        return Err(Error::ConstantSeries);
    }
    Ok(buf[..=max_lag].iter().map(|c| c.re / c0).collect())
}

/// Integrated autocorrelation time by Geyer's initial monotone sequence
/// applied to sums of adjacent autocorrelation pairs, truncated at
/// `max_lag`. Floored at `1 / log10(n)` so strongly antithetic chains give a
/// finite ESS above `n`.
pub fn integrated_autocorr_time(x: &[f64], max_lag: usize) -> Result<f64> {
    let n = x.len();
    if n < MIN_ESS_LEN {
        return Err(Error::TooShort { len: n, min: MIN_ESS_LEN });
    }
    let acf = autocorrelation(x, max_lag.max(1).min(n - 2))?;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for pair in acf.chunks_exact(2) {
        let gamma = pair[0] + pair[1];
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
    }
    let tau = -1.0 + 2.0 * sum;
    Ok(tau.max(1.0 / (n as f64).log10()))
}

/// Effective sample size `n / tau` with the default truncation lag.
pub fn ess(x: &[f64]) -> Result<f64> {
    let tau = integrated_autocorr_time(x, default_max_lag(x.len()))?;
    Ok(x.len() as f64 / tau)
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// `None` when the estimator failed; see `error`.
    pub ess: Option<f64>,
    /// Inefficiency factor `n / ESS`.
    pub inefficiency: Option<f64>,
    /// ESS per second of sampling time.
    pub esr: Option<f64>,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ESS)`.
    pub mcse: Option<f64>,
    pub acf: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub n_draws: usize,
    pub seconds: f64,
    pub params: Vec<ParamSummary>,
    /// Minimum ESR over all parameters; `None` if any estimate failed.
    pub min_esr: Option<f64>,
}

impl EfficiencyReport {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Summary of one column of draws. `acf_lags` autocorrelations are kept.
pub fn summarize(name: &str, x: &[f64], seconds: f64, acf_lags: usize) -> ParamSummary {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (ess_value, error) = match ess(x) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let acf = if n >= 2 {
        autocorrelation(x, acf_lags.min(n - 2)).unwrap_or_default()
    } else {
        Vec::new()
    };
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        ess: ess_value,
        inefficiency: ess_value.map(|e| n as f64 / e),
        esr: ess_value.map(|e| e / seconds),
        mcse: ess_value.map(|e| sd / e.sqrt()),
        acf,
        error,
    }
}

/// Report over named columns of draws taken in `seconds` of sampling time.
pub fn efficiency_from_columns(names: &[&str], columns: &[Vec<f64>], seconds: f64, acf_lags: usize) -> EfficiencyReport {
    let params: Vec<ParamSummary> = names
        .iter()
        .zip(columns)
        .map(|(name, col)| summarize(name, col, seconds, acf_lags))
        .collect();
    let min_esr = params
        .iter()
        .map(|p| p.esr)
        .try_fold(f64::INFINITY, |m, e| e.map(|e| m.min(e)))
        .filter(|m| m.is_finite());
    EfficiencyReport {
        n_draws: columns.first().map_or(0, Vec::len),
        seconds,
        params,
        min_esr,
    }
}

/// IF, ESS and ESR of `(phi, rho, sigma, mu)`; ESR uses sampling time only.
pub fn efficiency_report(out: &ChainOutput, acf_lags: usize) -> EfficiencyReport {
    let columns: Vec<Vec<f64>> = (0..4).map(|j| out.column(j)).collect();
    efficiency_from_columns(&PARAM_NAMES, &columns, out.sampling_seconds, acf_lags)
}
