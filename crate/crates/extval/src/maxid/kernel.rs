//! Mean measure kappa_bar of the Poisson magnitudes and the Gaussian
//! correlation function rho.

use crate::error::{ExtvalError, Result};

/// Below this, beta is treated as exactly zero (kappa_bar -> r^-2).
pub const BETA_EPS: f64 = 1e-10;

/// kappa_bar(r) = r^-1 exp{(1 - r^beta)/beta} for beta > 0; analytic limit
/// r^-2 as beta -> 0. Strictly decreasing in r, -> 0 as r -> inf.
pub fn kappa_bar(r: f64, beta: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(ExtvalError::domain(format!("kappa_bar needs r > 0, got {r}")));
    }
    if beta < 0.0 {
        return Err(ExtvalError::domain("kappa_bar needs beta >= 0"));
    }
    Ok(kappa_bar_unchecked(r, beta))
}

#[inline]
pub(crate) fn kappa_bar_unchecked(r: f64, beta: f64) -> f64 {
    let ln_r = r.ln();
    let exponent = if beta < BETA_EPS {
        -2.0 * ln_r
    } else {
        // (1 - r^beta)/beta = -expm1(beta ln r)/beta, stable for all beta.
        -ln_r - (beta * ln_r).exp_m1() / beta
    };
    exponent.exp()
}

/// d/dr kappa_bar(r) = -kappa_bar(r) (1/r + r^(beta-1)).
pub fn kappa_bar_prime(r: f64, beta: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(ExtvalError::domain("kappa_bar_prime needs r > 0"));
    }
    if beta < 0.0 {
        return Err(ExtvalError::domain("kappa_bar_prime needs beta >= 0"));
    }
    Ok(kappa_bar_prime_unchecked(r, beta))
}

#[inline]
pub(crate) fn kappa_bar_prime_unchecked(r: f64, beta: f64) -> f64 {
    let ln_r = r.ln();
    let r_pow = if beta < BETA_EPS {
        (-ln_r).exp()
    } else {
        ((beta - 1.0) * ln_r).exp()
    };
    -kappa_bar_unchecked(r, beta) * (1.0 / r + r_pow)
}

/// Inverse of kappa_bar in r for a given beta, by bracketed bisection with
/// Newton polish. kappa_bar is strictly decreasing so the root is unique.
pub fn kappa_bar_inv(y: f64, beta: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(ExtvalError::domain("kappa_bar_inv needs y in (0, inf)"));
    }
    if beta < 0.0 {
        return Err(ExtvalError::domain("kappa_bar_inv needs beta >= 0"));
    }
    // Bracket the root starting from r = 1 where kappa_bar = 1.
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    if y < 1.0 {
        while kappa_bar_unchecked(hi, beta) > y {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(ExtvalError::numeric("kappa_bar_inv bracket overflow"));
            }
        }
        lo = hi / 2.0;
    } else {
        while kappa_bar_unchecked(lo, beta) < y {
            lo /= 2.0;
            if lo < 1e-300 {
                return Err(ExtvalError::numeric("kappa_bar_inv bracket underflow"));
            }
        }
        hi = lo * 2.0;
    }
    // Bisection in log space for robustness.
    let mut a = lo.ln();
    let mut b = hi.ln();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let v = kappa_bar_unchecked(m.exp(), beta);
        if v > y {
            a = m;
        } else {
            b = m;
        }
        if (b - a) < 1e-14 {
            break;
        }
    }
    let mut r = (0.5 * (a + b)).exp();
    // Newton polish.
    for _ in 0..4 {
        let f = kappa_bar_unchecked(r, beta) - y;
        let fp = kappa_bar_prime_unchecked(r, beta);
        if fp == 0.0 {
            break;
        }
        let step = f / fp;
        let r_new = r - step;
        if r_new > 0.0 && r_new.is_finite() {
            r = r_new;
        } else {
            break;
        }
        if (step / r).abs() < 1e-15 {
            break;
        }
    }
    Ok(r)
}

/// Gaussian correlation rho(d) = exp{-(d/lambda)^nu}.
pub fn rho(d_km: f64, lambda: f64, nu: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(ExtvalError::domain(format!("rho needs lambda > 0, got {lambda}")));
    }
    if !(d_km >= 0.0) {
        return Err(ExtvalError::domain("rho needs d >= 0"));
    }
    if !(nu > 0.0 && nu <= 2.0) {
        return Err(ExtvalError::domain("rho needs nu in (0, 2]"));
    }
    if d_km == 0.0 {
        return Ok(1.0);
    }
    Ok((-(d_km / lambda).powf(nu)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kappa_at_one_is_one() {
        for beta in [0.0, 1e-9, 0.2, 1.0, 5.0, 50.0] {
            assert_abs_diff_eq!(kappa_bar(1.0, beta).unwrap(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn kappa_closed_form_value() {
        // kappa_bar(2, 1) = 0.5 e^-1.
        assert_abs_diff_eq!(
            kappa_bar(2.0, 1.0).unwrap(),
            0.5 * (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn beta_zero_limit_is_r_minus_two() {
        for r in [0.5, 1.0, 2.0, 5.0] {
            let v = kappa_bar(r, 1e-8).unwrap();
            assert!(
                (v - r.powi(-2)).abs() < 1e-6,
                "beta->0 limit violated at r={r}: {v}"
            );
        }
    }

    #[test]
    fn strictly_decreasing_and_vanishing() {
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let mut prev = f64::INFINITY;
            for i in 1..200 {
                let r = i as f64 * 0.25;
                let v = kappa_bar(r, beta).unwrap();
                // Strict until the value underflows to zero.
                if prev > 0.0 {
                    assert!(v < prev, "not decreasing at r={r}, beta={beta}");
                } else {
                    assert_eq!(v, 0.0);
                }
                prev = v;
            }
            assert!(kappa_bar(1e6, beta).unwrap() < 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for beta in [0.0, 0.3, 1.0, 2.5] {
            for r in [0.3, 1.0, 2.7] {
                let h = 1e-6 * r;
                let fd = (kappa_bar(r + h, beta).unwrap() - kappa_bar(r - h, beta).unwrap())
                    / (2.0 * h);
                let an = kappa_bar_prime(r, beta).unwrap();
                assert!(
                    ((an - fd) / fd.abs().max(1e-10)).abs() < 1e-6,
                    "beta={beta} r={r}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        for beta in [0.0, 0.5, 1.0, 3.0] {
            for y in [1e-6, 0.01, 0.5, 1.0, 10.0, 1e4] {
                let r = kappa_bar_inv(y, beta).unwrap();
                let back = kappa_bar(r, beta).unwrap();
                assert!(
                    ((back - y) / y).abs() < 1e-9,
                    "beta={beta} y={y}: r={r} back={back}"
                );
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(kappa_bar(0.0, 1.0).is_err());
        assert!(kappa_bar(-1.0, 1.0).is_err());
        assert!(rho(1.0, 0.0, 1.0).is_err());
        assert!(rho(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho(0.0, 30.0, 1.0).unwrap(), 1.0);
        for nu in [0.5, 1.0, 1.7, 2.0] {
            assert_abs_diff_eq!(rho(30.0, 30.0, nu).unwrap(), (-1.0f64).exp(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(rho(60.0, 30.0, 1.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-14);
        // Decreasing in d.
        let mut prev = 1.0;
        for i in 1..50 {
            let v = rho(i as f64, 20.0, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }
}
