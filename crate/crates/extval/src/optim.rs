//! Limited-memory quasi-Newton minimizer with backtracking line search.
//!
//! Objectives may return +inf (infeasible region); the line search backtracks
//! out of it. Gradients are supplied by the caller, either analytic or by
//! central finite differences via [`fd_gradient`].

use crate::error::{ExtvalError, Result};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Convergence when ||g|| < grad_tol * (1 + |f|).
    pub grad_tol: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iterations: 500,
            grad_tol: 1e-5,
            memory: 10,
            armijo_c1: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize f via L-BFGS with a central finite-difference gradient. The
/// plain objective is used during line search; gradients are only computed
/// at accepted iterates.
pub fn minimize_fd<F>(x0: &[f64], opts: &OptimOptions, rel_step: f64, f: &F) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    let value_only = |x: &[f64]| f(x);
    let mut value_and_grad = |x: &[f64]| {
        let v = f(x);
        let g = fd_gradient(x, rel_step, f);
        (v, g)
    };
    let mut vg_box: Box<dyn FnMut(&[f64]) -> (f64, Vec<f64>)> = Box::new(&mut value_and_grad);
    minimize_impl(x0, opts, Some(&value_only), &mut vg_box)
}

/// Minimize f via L-BFGS. `eval` returns (objective, gradient).
pub fn minimize<F>(x0: &[f64], opts: &OptimOptions, mut eval: F) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut eval_box: Box<dyn FnMut(&[f64]) -> (f64, Vec<f64>)> = Box::new(&mut eval);
    minimize_impl(x0, opts, None, &mut eval_box)
}

fn minimize_impl(
    x0: &[f64],
    opts: &OptimOptions,
    // When present, used for line-search trial points (no gradient needed).
    mut value_only: Option<&dyn Fn(&[f64]) -> f64>,
    value_and_grad: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
) -> Result<OptimResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = value_and_grad(&x);
    if !f.is_finite() {
        return Err(ExtvalError::numeric(
            "objective is not finite at the starting point",
        ));
    }

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut best = OptimResult {
        x: x.clone(),
        f,
        grad_norm: norm(&g),
        iterations: 0,
        converged: false,
    };

    for iter in 0..opts.max_iterations {
        let gnorm = norm(&g);
        if gnorm < opts.grad_tol * (1.0 + f.abs()) {
            return Ok(OptimResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            });
        }

        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for j in 0..n {
                q[j] -= alpha[i] * y_hist[i][j];
            }
        }
        let gamma = if m > 0 {
            let sy = dot(&s_hist[m - 1], &y_hist[m - 1]);
            let yy = dot(&y_hist[m - 1], &y_hist[m - 1]);
            if yy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        } else {
            1.0
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for j in 0..n {
                q[j] += s_hist[i][j] * (alpha[i] - beta);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dg = dot(&dir, &g);
        if dg >= 0.0 {
            // Fall back to steepest descent if curvature info is unusable.
            dir = g.iter().map(|v| -v).collect();
            dg = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Backtracking Armijo line search.
        let mut step = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = f;
        let mut g_new = g.clone();
        for _ in 0..60 {
            for j in 0..n {
                x_new[j] = x[j] + step * dir[j];
            }
            let ft = match value_only.as_mut() {
                Some(vf) => vf(&x_new),
                None => {
                    let (ft, gt) = value_and_grad(&x_new);
                    g_new = gt;
                    ft
                }
            };
            if ft.is_finite() && ft <= f + opts.armijo_c1 * step * dg {
                f_new = ft;
                if value_only.is_some() {
                    let (_, gt) = value_and_grad(&x_new);
                    g_new = gt;
                }
                accepted = true;
                break;
            }
            step *= opts.backtrack;
        }
        if !accepted {
            // No acceptable step along this direction; give up here.
            return Ok(OptimResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter,
                converged: gnorm < opts.grad_tol * (1.0 + f.abs()),
            });
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            s_hist.push(s);
            y_hist.push(yv);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }

        x = x_new;
        f = f_new;
        g = g_new;
        if f < best.f {
            best = OptimResult {
                x: x.clone(),
                f,
                grad_norm: norm(&g),
                iterations: iter + 1,
                converged: false,
            };
        }
    }

    let gnorm = norm(&g);
    if gnorm < opts.grad_tol * (1.0 + f.abs()) {
        Ok(OptimResult {
            x,
            f,
            grad_norm: gnorm,
            iterations: opts.max_iterations,
            converged: true,
        })
    } else {
        Err(ExtvalError::NonConvergence {
            iterations: opts.max_iterations,
            best: best.f,
        })
    }
}

/// Central finite-difference gradient of `f`.
pub fn fd_gradient<F>(x: &[f64], rel_step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Symmetric numeric Hessian by central differences of `f`.
pub fn fd_hessian<F>(x: &[f64], rel_step: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel_step * (1.0 + v.abs())).collect();
    let f0 = f(x);
    let mut hess = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    // Diagonal.
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    // Off-diagonal.
    for i in 0..n {
        for j in (i + 1)..n {
            xp[i] = x[i] + h[i];
            xp[j] = x[j] + h[j];
            let fpp = f(&xp);
            xp[j] = x[j] - h[j];
            let fpm = f(&xp);
            xp[i] = x[i] - h[i];
            xp[j] = x[j] + h[j];
            let fmp = f(&xp);
            xp[j] = x[j] - h[j];
            let fmm = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}
