//! Marginal distribution of the max-id process: G(z) = exp(-V1site(z)) on
//! z > 0, with a cached inverse.
//!
//! The inverse keeps a 2048-point log-spaced grid of ln V1site per beta with
//! monotone-cubic (Fritsch-Carlson) interpolation; every evaluation is
//! verified against the exact quadrature CDF and Newton-polished whenever the
//! interpolation error exceeds 1e-8.

use crate::error::{ExtvalError, Result};

use super::exponent::ExponentQuad;

const GRID_POINTS: usize = 2048;
/// V1site range covered by the grid: G in [exp(-33), exp(-1e-13)], wider than
/// the nudged open interval of the uniform table.
const V_HI: f64 = 33.0;
const V_LO: f64 = 1e-13;
const POLISH_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct MarginGrid {
    beta: f64,
    ln_z: Vec<f64>,
    ln_v: Vec<f64>,
    /// Fritsch-Carlson tangents d(ln v)/d(ln z) at the grid points.
    tangents: Vec<f64>,
}

impl MarginGrid {
    pub fn new(beta: f64, quad: &ExponentQuad) -> Result<Self> {
        if beta < 0.0 {
            return Err(ExtvalError::domain("beta must be >= 0"));
        }
        // Bracket [z_lo, z_hi] with V1site(z_lo) >= V_HI and V1site(z_hi) <= V_LO.
        let mut z_lo = 1.0f64;
        let mut guard = 0;
        while quad.v1site(z_lo, beta) < V_HI {
            z_lo *= 0.25;
            guard += 1;
            if guard > 600 {
                return Err(ExtvalError::numeric("margin grid: lower bracket failed"));
            }
        }
        let mut z_hi = 1.0f64;
        guard = 0;
        while quad.v1site(z_hi, beta) > V_LO {
            z_hi *= 4.0;
            guard += 1;
            if guard > 600 {
                return Err(ExtvalError::numeric("margin grid: upper bracket failed"));
            }
        }
        let (ln_lo, ln_hi) = (z_lo.ln(), z_hi.ln());
        let mut ln_z = Vec::with_capacity(GRID_POINTS);
        let mut ln_v = Vec::with_capacity(GRID_POINTS);
        for i in 0..GRID_POINTS {
            let lz = ln_lo + (ln_hi - ln_lo) * i as f64 / (GRID_POINTS - 1) as f64;
            let v = quad.v1site(lz.exp(), beta);
            if !(v > 0.0) {
                return Err(ExtvalError::numeric("margin grid: V1site underflow"));
            }
            ln_z.push(lz);
            ln_v.push(v.ln());
        }
        let tangents = fritsch_carlson_tangents(&ln_z, &ln_v);
        Ok(MarginGrid { beta, ln_z, ln_v, tangents })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Exact CDF via quadrature.
    pub fn cdf(&self, quad: &ExponentQuad, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(ExtvalError::domain("margin cdf needs z > 0"));
        }
        Ok((-quad.v1site(z, self.beta)).exp())
    }

    /// Density g(z) = G(z) * (-dV1site/dz).
    pub fn density(&self, quad: &ExponentQuad, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(ExtvalError::domain("margin density needs z > 0"));
        }
        let (v, dv) = quad.v1site_with_deriv(z, self.beta);
        Ok((-v).exp() * (-dv))
    }

    /// Inverse CDF: z with G(z) = u, interpolated then polished to 1e-10.
    pub fn inverse(&self, quad: &ExponentQuad, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(ExtvalError::domain(format!("margin inverse needs u in (0,1), got {u}")));
        }
        let target_v = -u.ln();
        let ln_target = target_v.ln();
        // ln_v is strictly decreasing in index; locate the bracket.
        let n = self.ln_v.len();
        let mut z = if ln_target >= self.ln_v[0] {
            self.ln_z[0].exp()
        } else if ln_target <= self.ln_v[n - 1] {
            self.ln_z[n - 1].exp()
        } else {
            let mut lo = 0usize;
            let mut hi = n - 1;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if self.ln_v[mid] > ln_target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // Invert the Hermite cubic on [lo, hi] by Newton in ln z.
            let (x0, x1) = (self.ln_z[lo], self.ln_z[hi]);
            let (y0, y1) = (self.ln_v[lo], self.ln_v[hi]);
            let (m0, m1) = (self.tangents[lo], self.tangents[hi]);
            let h = x1 - x0;
            let eval = |t: f64| -> (f64, f64) {
                // Cubic Hermite value and derivative w.r.t. t in [0,1].
                let t2 = t * t;
                let t3 = t2 * t;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                let val = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
                let d_h00 = 6.0 * t2 - 6.0 * t;
                let d_h10 = 3.0 * t2 - 4.0 * t + 1.0;
                let d_h01 = -6.0 * t2 + 6.0 * t;
                let d_h11 = 3.0 * t2 - 2.0 * t;
                let der = d_h00 * y0 + d_h10 * h * m0 + d_h01 * y1 + d_h11 * h * m1;
                (val, der)
            };
            let mut t = if y1 != y0 { (ln_target - y0) / (y1 - y0) } else { 0.5 };
            for _ in 0..8 {
                let (val, der) = eval(t);
                if der.abs() < 1e-30 {
                    break;
                }
                let step = (val - ln_target) / der;
                t = (t - step).clamp(0.0, 1.0);
                if step.abs() < 1e-14 {
                    break;
                }
            }
            (x0 + t * h).exp()
        };
        // Polish against the exact quadrature when the interpolation misses.
        for _ in 0..40 {
            let (v, dv) = quad.v1site_with_deriv(z, self.beta);
            if ((-v).exp() - u).abs() <= POLISH_TOL {
                return Ok(z);
            }
            if dv >= 0.0 {
                break;
            }
            let step = (v - target_v) / dv;
            let z_new = z - step;
            if !(z_new > 0.0 && z_new.is_finite()) {
                // Bisection fallback.
                let z_alt = if v > target_v { z * 2.0 } else { z * 0.5 };
                z = z_alt;
                continue;
            }
            z = z_new;
        }
        let back = self.cdf(quad, z)?;
        if (back - u).abs() < 1e-6 {
            Ok(z)
        } else {
            Err(ExtvalError::numeric(format!(
                "margin inverse failed to converge at u={u} (reached {back})"
            )))
        }
    }
}

/// Monotone cubic interpolation tangents (Fritsch & Carlson 1980).
fn fritsch_carlson_tangents(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut delta = vec![0.0; n - 1];
    for i in 0..n - 1 {
        delta[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    }
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            m[i] = 0.5 * (delta[i - 1] + delta[i]);
        }
    }
    // Limit tangents to preserve monotonicity.
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
        } else {
            let a = m[i] / delta[i];
            let b = m[i + 1] / delta[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[i] = tau * a * delta[i];
                m[i + 1] = tau * b * delta[i];
            }
        }
    }
    m
}
