//! Small dense numerical optimization: BFGS with finite-difference
//! gradients and central-difference Hessians, sized for the
//! three-dimensional Laplace approximation in the AUX sampler.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Budget of objective evaluations for the mode search.
    pub max_evals: usize,
    /// Relative change of the objective below which the search stops.
    pub rel_tol: f64,
    /// Step for the central-difference gradient.
    pub grad_step: f64,
    /// Per-coordinate step for the central-difference Hessian.
    pub hessian_step: f64,
    /// Proposal variance used when the Hessian at the mode is not negative definite.
    pub fallback_variance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 500,
            rel_tol: 1e-8,
            grad_step: 1e-5,
            hessian_step: 1e-4,
            fallback_variance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F> Counted<F> {
    fn call<const N: usize>(&mut self, x: &[f64; N]) -> f64
    where
        F: FnMut(&[f64; N]) -> f64,
    {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradient<const N: usize, F: FnMut(&[f64; N]) -> f64>(
    f: &mut Counted<F>,
    x: &[f64; N],
    step: f64,
) -> [f64; N] {
    let mut g = [0.0; N];
    for i in 0..N {
        let h = step * x[i].abs().max(1.0);
        let mut up = *x;
        let mut dn = *x;
        up[i] += h;
        dn[i] -= h;
        g[i] = (f.call(&up) - f.call(&dn)) / (2.0 * h);
    }
    g
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient<const N: usize>(
    f: impl FnMut(&[f64; N]) -> f64,
    x: &[f64; N],
    step: f64,
) -> [f64; N] {
    gradient(&mut Counted { f, evals: 0 }, x, step)
}

/// Minimizes `f` by BFGS starting from `x0`. Non-finite objective values are
/// treated as `+inf` so the line search backs away from them.
pub fn minimize_bfgs<const N: usize>(
    f: impl FnMut(&[f64; N]) -> f64,
    x0: [f64; N],
    cfg: &OptimizerConfig,
) -> OptimResult<N> {
    let mut f = Counted { f, evals: 0 };
    let mut x = x0;
    let mut fx = f.call(&x);
    if !fx.is_finite() {
        return OptimResult { x, value: fx, evals: f.evals, converged: false };
    }
    let mut g = gradient(&mut f, &x, cfg.grad_step);
    let mut inv_h = [[0.0; N]; N];
    for (i, row) in inv_h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut first = true;
    let grad_tol = 1e-6;

    while f.evals < cfg.max_evals {
        if g.iter().all(|v| v.abs() < grad_tol) {
            return OptimResult { x, value: fx, evals: f.evals, converged: true };
        }
        let mut dir = [0.0; N];
        for i in 0..N {
            dir[i] = -dot(&inv_h[i], &g);
        }
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            for i in 0..N {
                dir[i] = -g[i];
                for j in 0..N {
                    inv_h[i][j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            slope = dot(&dir, &g);
        }
        // Backtracking line search with the Armijo condition.
        let mut step = 1.0;
        let mut accepted = None;
        while f.evals < cfg.max_evals && step > 1e-12 {
            let mut trial = x;
            for i in 0..N {
                trial[i] += step * dir[i];
            }
            let ft = f.call(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            let small = g.iter().all(|v| v.abs() < 1e-3);
            return OptimResult { x, value: fx, evals: f.evals, converged: small };
        };
        let g_new = gradient(&mut f, &x_new, cfg.grad_step);
        let mut s = [0.0; N];
        let mut yv = [0.0; N];
        for i in 0..N {
            s[i] = x_new[i] - x[i];
            yv[i] = g_new[i] - g[i];
        }
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        let f_old = fx;
        fx = f_new;
        if decrease <= cfg.rel_tol * (f_old.abs() + cfg.rel_tol) {
            return OptimResult { x, value: fx, evals: f.evals, converged: true };
        }
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if first {
                let scale = sy / dot(&yv, &yv);
                for (i, row) in inv_h.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if i == j { scale } else { 0.0 };
                    }
                }
                first = false;
            }
            // H <- (I - r s y') H (I - r y s') + r s s'
            let r = 1.0 / sy;
            let mut hy = [0.0; N];
            for i in 0..N {
                hy[i] = dot(&inv_h[i], &yv);
            }
            let yhy = dot(&yv, &hy);
            for i in 0..N {
                for j in 0..N {
                    inv_h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j])
                        + (r * r * yhy + r) * s[i] * s[j];
                }
            }
        }
    }
    OptimResult { x, value: fx, evals: f.evals, converged: false }
}

/// Central-difference Hessian of `f` at `x` with step `h` in every coordinate.
pub fn numerical_hessian<const N: usize>(
    mut f: impl FnMut(&[f64; N]) -> f64,
    x: &[f64; N],
    h: f64,
) -> [[f64; N]; N] {
    let f0 = f(x);
    let mut out = [[0.0; N]; N];
    let shifted = |i: usize, di: f64, j: usize, dj: f64| {
        let mut p = *x;
        p[i] += di;
        p[j] += dj;
        p
    };
    for i in 0..N {
        let up = f(&shifted(i, h, i, 0.0));
        let dn = f(&shifted(i, -h, i, 0.0));
        out[i][i] = (up - 2.0 * f0 + dn) / (h * h);
        for j in 0..i {
            let pp = f(&shifted(i, h, j, h));
            let pm = f(&shifted(i, h, j, -h));
            let mp = f(&shifted(i, -h, j, h));
            let mm = f(&shifted(i, -h, j, -h));
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<const N: usize>(a: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_solve<const N: usize>(l: &[[f64; N]; N], b: &[f64; N]) -> [f64; N] {
    let mut x = [0.0; N];
    for i in 0..N {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse<const N: usize>(a: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let l = cholesky(a)?;
    let mut inv = [[0.0; N]; N];
    for j in 0..N {
        let mut e = [0.0; N];
        e[j] = 1.0;
        let y = forward_solve(&l, &e);
        // back substitution with L'
        let mut x = [0.0; N];
        for i in (0..N).rev() {
            let mut s = y[i];
            for k in i + 1..N {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        for i in 0..N {
            inv[i][j] = x[i];
        }
    }
    Some(inv)
}
