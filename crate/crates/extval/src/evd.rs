//! Generalised extreme value distribution: CDF, quantile, density,
//! log-likelihood with analytic gradient, probability integral transform,
//! return levels and the CRPS.
//!
//! All shape-parameter expressions switch to the Gumbel limit when
//! |xi| < `XI_EPS` and use log1p/expm1 forms elsewhere so the xi -> 0
//! neighbourhood is free of cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::num::{exp_int_e1, gamma_fn, lower_inc_gamma, EULER_GAMMA};
use crate::quad::adaptive_simpson;

/// Shape values below this magnitude are treated as Gumbel.
pub const XI_EPS: f64 = 1e-8;

/// Location / scale / shape triple for one block-maximum distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && xi.is_finite()) {
            return Err(ExtvalError::domain("GEV parameters must be finite"));
        }
        if sigma <= 0.0 {
            return Err(ExtvalError::domain(format!("GEV sigma must be > 0, got {sigma}")));
        }
        Ok(GevParams { mu, sigma, xi })
    }

    /// Support check: 1 + xi (x - mu)/sigma > 0 (all reals for the Gumbel case).
    pub fn in_support(&self, x: f64) -> bool {
        if self.xi.abs() < XI_EPS {
            return true;
        }
        1.0 + self.xi * (x - self.mu) / self.sigma > 0.0
    }

    /// Finite support endpoint: lower for xi > 0, upper for xi < 0.
    pub fn endpoint(&self) -> Option<f64> {
        if self.xi.abs() < XI_EPS {
            None
        } else {
            Some(self.mu - self.sigma / self.xi)
        }
    }

    /// Distribution median.
    pub fn median(&self) -> f64 {
        gev_quantile(0.5, self).expect("median is always defined")
    }
}

/// Return-level specification: period in years and blocks per year
/// (12 for monthly maxima, each month treated as its own yearly block series).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnSpec {
    pub period_years: u32,
    pub block_frequency: u32,
}

impl ReturnSpec {
    pub fn new(period_years: u32, block_frequency: u32) -> Result<Self> {
        if period_years < 2 {
            return Err(ExtvalError::domain("return period must be >= 2 years"));
        }
        if block_frequency == 0 {
            return Err(ExtvalError::domain("block frequency must be >= 1"));
        }
        Ok(ReturnSpec { period_years, block_frequency })
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ExtvalError::domain("non-finite observation"))
    }
}

/// GEV CDF exp{-[1 + xi (x-mu)/sigma]_+^(-1/xi)}, Gumbel limit at xi = 0.
pub fn gev_cdf(x: f64, p: &GevParams) -> Result<f64> {
    check_x(x)?;
    let s = (x - p.mu) / p.sigma;
    if p.xi.abs() < XI_EPS {
        return Ok((-(-s).exp()).exp());
    }
    let arg = p.xi * s;
    if arg <= -1.0 {
        // Outside support: below the lower endpoint (xi > 0) F = 0,
        // above the upper endpoint (xi < 0) F = 1.
        return Ok(if p.xi > 0.0 { 0.0 } else { 1.0 });
    }
    let log_t = arg.ln_1p();
    Ok((-(-log_t / p.xi).exp()).exp())
}

/// GEV quantile for u in (0,1); exact inverse of [`gev_cdf`].
pub fn gev_quantile(u: f64, p: &GevParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(ExtvalError::domain(format!("quantile level must be in (0,1), got {u}")));
    }
    let g = -(-u.ln()).ln(); // Gumbel quantile
    if p.xi.abs() < XI_EPS {
        Ok(p.mu + p.sigma * g)
    } else {
        // ((-ln u)^(-xi) - 1)/xi computed as expm1(xi * g)/xi.
        Ok(p.mu + p.sigma * (p.xi * g).exp_m1() / p.xi)
    }
}

/// Log density; -inf off support.
pub fn gev_logpdf(x: f64, p: &GevParams) -> f64 {
    if !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let s = (x - p.mu) / p.sigma;
    if p.xi.abs() < XI_EPS {
        return -p.sigma.ln() - s - (-s).exp();
    }
    let arg = p.xi * s;
    if arg <= -1.0 {
        return f64::NEG_INFINITY;
    }
    let log_t = arg.ln_1p();
    -p.sigma.ln() - (1.0 + 1.0 / p.xi) * log_t - (-log_t / p.xi).exp()
}

/// Negative log-likelihood and its gradient with respect to (mu, sigma, xi).
///
/// `grad` is `None` when any datum falls off the support (the nll is +inf
/// there and the gradient is not defined).
#[derive(Debug, Clone, Copy)]
pub struct NllGrad {
    pub nll: f64,
    pub grad: Option<[f64; 3]>,
}

/// Sum of per-observation negative log-likelihoods with the analytic gradient.
pub fn gev_nll_grad(p: &GevParams, data: &[f64]) -> Result<NllGrad> {
    if data.iter().any(|x| !x.is_finite()) {
        return Err(ExtvalError::domain("data must be finite"));
    }
    let mut nll = 0.0;
    let mut g = [0.0f64; 3];
    let sig = p.sigma;
    if p.xi.abs() < XI_EPS {
        for &x in data {
            let z = (x - p.mu) / sig;
            let e = (-z).exp();
            nll += sig.ln() + z + e;
            g[0] += (e - 1.0) / sig;
            g[1] += (1.0 - z * (1.0 - e)) / sig;
            // Limit of d nll / d xi as xi -> 0.
            g[2] += z - 0.5 * z * z * (1.0 - e);
        }
        return Ok(NllGrad { nll, grad: Some(g) });
    }
    let xi = p.xi;
    for &x in data {
        let z = (x - p.mu) / sig;
        let arg = xi * z;
        if arg <= -1.0 {
            return Ok(NllGrad { nll: f64::INFINITY, grad: None });
        }
        let log_t = arg.ln_1p();
        let t = 1.0 + arg;
        let tp = (-log_t / xi).exp(); // t^(-1/xi)
        nll += sig.ln() + (1.0 + 1.0 / xi) * log_t + tp;
        let dnll_dt = (1.0 + 1.0 / xi) / t - tp / (xi * t);
        g[0] += dnll_dt * (-xi / sig);
        g[1] += 1.0 / sig + dnll_dt * (-xi * z / sig);
        g[2] += -log_t / (xi * xi)
            + (1.0 + 1.0 / xi) * z / t
            + tp * (log_t / (xi * xi) - z / (xi * t));
    }
    Ok(NllGrad { nll, grad: Some(g) })
}

/// Probability integral transform u = F(x).
pub fn pit(x: f64, p: &GevParams) -> Result<f64> {
    gev_cdf(x, p)
}

/// Effective T-year return level: the (1 - 1/T) quantile of the per-block
/// distribution, each monthly block series carrying one block per year.
pub fn return_level(spec: &ReturnSpec, p: &GevParams) -> Result<f64> {
    let u = 1.0 - 1.0 / spec.period_years as f64;
    gev_quantile(u, p)
}

/// Relative change (%) in return level between two parameter sets
/// (e.g. covariates frozen at two different years).
pub fn return_level_relative_change(spec: &ReturnSpec, from: &GevParams, to: &GevParams) -> Result<f64> {
    let a = return_level(spec, from)?;
    let b = return_level(spec, to)?;
    if a == 0.0 {
        return Err(ExtvalError::numeric("baseline return level is zero"));
    }
    Ok(100.0 * (b - a) / a)
}

/// Continuous ranked probability score for a GEV forecast.
///
/// Closed form (incomplete-gamma representation) when xi < 1; numeric
/// integration for xi in [1, 2) where the score is still finite; +inf for
/// xi >= 2.
pub fn crps_gev(y: f64, p: &GevParams) -> Result<f64> {
    check_x(y)?;
    if p.xi < 1.0 {
        Ok(crps_gev_closed(y, p))
    } else if p.xi < 2.0 {
        log::warn!("crps_gev: xi = {} >= 1, using numeric integration", p.xi);
        Ok(crps_gev_numeric(y, p, 1e-9))
    } else {
        Ok(f64::INFINITY)
    }
}

/// Closed-form GEV CRPS, valid for xi < 1.
///
/// With s = (y-mu)/sigma, t = 1 + xi s, z = t^(-1/xi), w = exp(-z):
///   CRPS/sigma = s (2w - 1) + (2/xi) (lgamma(1-xi, z) + exp(-z) - 1)
///                + (1 - 2^xi Gamma(1-xi)) / xi
/// and the Gumbel limit -s + gamma_E - ln 2 + 2 E1(e^(-s)).
pub fn crps_gev_closed(y: f64, p: &GevParams) -> f64 {
    let s = (y - p.mu) / p.sigma;
    let sig = p.sigma;
    if p.xi.abs() < XI_EPS {
        let e1 = if s < -690.0 { 0.0 } else { exp_int_e1((-s).exp()) };
        return sig * (-s + EULER_GAMMA - std::f64::consts::LN_2 + 2.0 * e1);
    }
    let xi = p.xi;
    let g1 = gamma_fn(1.0 - xi);
    let two_xi = 2f64.powf(xi);
    let t = 1.0 + xi * s;
    if t <= 0.0 {
        return if xi > 0.0 {
            // Below the lower endpoint.
            sig * (-s + ((2.0 - two_xi) * g1 - 1.0) / xi)
        } else {
            // Above the upper endpoint.
            sig * (s + (1.0 - two_xi * g1) / xi)
        };
    }
    let z = (-(xi * s).ln_1p() / xi).exp();
    let w = (-z).exp();
    sig * (s * (2.0 * w - 1.0)
        + (2.0 / xi) * (lower_inc_gamma(1.0 - xi, z) + (-z).exp() - 1.0)
        + (1.0 - two_xi * g1) / xi)
}

/// CRPS by direct integration of (F(t) - 1{t >= y})^2; used as the fallback
/// for xi >= 1 and as the independent oracle in tests.
pub fn crps_gev_numeric(y: f64, p: &GevParams, tol: f64) -> f64 {
    // Choose integration bounds so the neglected tails are below ~1e-12.
    let lo = match p.endpoint() {
        Some(e) if p.xi > 0.0 => e,
        _ => {
            // F(lo)^2 negligible; Gumbel/Weibull lower tails die superexponentially.
            p.mu - 12.0 * p.sigma
        }
    };
    let hi = match p.endpoint() {
        Some(e) if p.xi < 0.0 => e,
        _ => {
            if p.xi.abs() < XI_EPS {
                p.mu + 45.0 * p.sigma
            } else {
                // Tail of int (1-F)^2 beyond hi is ~ sigma a^(1-2/xi)/(2-xi); pick a
                // so that it is < 1e-12.
                let a = (p.sigma / ((2.0 - p.xi) * 1e-12)).powf(p.xi / (2.0 - p.xi));
                p.mu + p.sigma * (a.max(1.0) - 1.0) / p.xi + 45.0 * p.sigma
            }
        }
    };
    let f = |t: f64| gev_cdf(t, p).unwrap_or(0.0);
    let mut total = 0.0;
    if y > lo {
        let b = y.min(hi);
        total += adaptive_simpson(&|t| f(t).powi(2), lo, b, tol);
    } else {
        total += lo - y; // F = 0 on [y, lo): integrand is 1
    }
    if y < hi {
        let a = y.max(lo);
        total += adaptive_simpson(&|t| (1.0 - f(t)).powi(2), a, hi, tol);
    } else {
        total += y - hi; // F = 1 on (hi, y]
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn std_gumbel() -> GevParams {
        GevParams::new(0.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn cdf_gumbel_at_location() {
        let v = gev_cdf(0.0, &std_gumbel()).unwrap();
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn cdf_upper_endpoint_weibull() {
        let p = GevParams::new(0.0, 1.0, -0.5).unwrap();
        // Upper endpoint at mu + sigma/|xi| = 2.
        assert_eq!(gev_cdf(2.0, &p).unwrap(), 1.0);
        assert_eq!(gev_cdf(5.0, &p).unwrap(), 1.0);
    }

    #[test]
    fn cdf_frechet_closed_form() {
        let p = GevParams::new(0.0, 1.0, 0.5).unwrap();
        // t = 1 + 0.5*2 = 2, 2^(-2) = 0.25.
        assert_abs_diff_eq!(gev_cdf(2.0, &p).unwrap(), (-0.25f64).exp(), epsilon = 1e-12);
        // Below the lower endpoint (-2) the CDF is zero.
        assert_eq!(gev_cdf(-3.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(gev_cdf(f64::NAN, &std_gumbel()).is_err());
        assert!(GevParams::new(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_gumbel_known() {
        assert_abs_diff_eq!(
            gev_quantile((-1.0f64).exp(), &std_gumbel()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            gev_quantile(0.99, &std_gumbel()).unwrap(),
            -((-(0.99f64.ln())).ln()),
            epsilon = 1e-12
        );
        assert!(gev_quantile(0.0, &std_gumbel()).is_err());
        assert!(gev_quantile(1.0, &std_gumbel()).is_err());
    }

    #[test]
    fn quantile_cdf_round_trip_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..400 {
            let p = GevParams::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.2..4.0),
                rng.gen_range(-0.45..0.45),
            )
            .unwrap();
            let u: f64 = rng.gen_range(0.001..0.999);
            let x = gev_quantile(u, &p).unwrap();
            let back = gev_cdf(x, &p).unwrap();
            assert!(
                (back - u).abs() <= 1e-10 * u.max(1e-3),
                "round trip failed: u={u}, back={back}, p={p:?}"
            );
        }
    }

    #[test]
    fn xi_continuity_at_zero() {
        let near = GevParams::new(0.3, 1.7, 1e-8).unwrap();
        let near_neg = GevParams::new(0.3, 1.7, -1e-8).unwrap();
        let gum = GevParams::new(0.3, 1.7, 0.0).unwrap();
        let mut x = -5.0;
        while x <= 12.0 {
            let f0 = gev_cdf(x, &gum).unwrap();
            assert!((gev_cdf(x, &near).unwrap() - f0).abs() < 1e-6);
            assert!((gev_cdf(x, &near_neg).unwrap() - f0).abs() < 1e-6);
            x += 0.25;
        }
    }

    #[test]
    fn logpdf_gumbel_at_zero() {
        assert_abs_diff_eq!(gev_logpdf(0.0, &std_gumbel()), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn logpdf_off_support_is_neg_inf() {
        let p = GevParams::new(0.0, 1.0, 0.5).unwrap();
        assert_eq!(gev_logpdf(-2.5, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn density_integrates_to_one() {
        // Quadrature oracle: integrate exp(logpdf) over the support, with
        // panel edges at quantiles refined geometrically into both tails.
        let gl = GaussLegendre::new(60);
        for &xi in &[-0.3, 0.0, 0.25] {
            let p = GevParams::new(1.0, 2.0, xi).unwrap();
            let mut levels: Vec<f64> = Vec::new();
            for k in (2..=14).rev() {
                levels.push(10f64.powi(-k));
            }
            for i in 2..=98 {
                levels.push(i as f64 / 100.0);
            }
            for k in 2..=14 {
                levels.push(1.0 - 10f64.powi(-k));
            }
            let cuts: Vec<f64> = levels
                .iter()
                .map(|&u| gev_quantile(u, &p).unwrap())
                .collect();
            let mut total = 0.0;
            for w in cuts.windows(2) {
                if w[1] > w[0] {
                    total += gl.integrate(w[0], w[1], |x| gev_logpdf(x, &p).exp());
                }
            }
            // Account for the truncated 1e-14 tails explicitly.
            total += 2e-14;
            assert!(
                (total - 1.0).abs() < 1e-6,
                "density mass {total} for xi={xi}"
            );
        }
    }

    #[test]
    fn nll_single_datum_gumbel_mode() {
        // Gumbel mode is at mu; density e^-1 there, so nll = 1.
        let r = gev_nll_grad(&std_gumbel(), &[0.0]).unwrap();
        assert_abs_diff_eq!(r.nll, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nll_off_support_is_infinite() {
        let p = GevParams::new(0.0, 1.0, 0.5).unwrap();
        let r = gev_nll_grad(&p, &[-5.0]).unwrap();
        assert!(r.nll.is_infinite());
        assert!(r.grad.is_none());
    }

    fn fd_grad(p: &GevParams, data: &[f64]) -> [f64; 3] {
        let scale = [1.0 + p.mu.abs(), p.sigma, 1.0 + p.xi.abs()];
        let mut g = [0.0; 3];
        for i in 0..3 {
            let h = 1e-6 * scale[i];
            let mut lo = *p;
            let mut hi = *p;
            match i {
                0 => {
                    lo.mu -= h;
                    hi.mu += h;
                }
                1 => {
                    lo.sigma -= h;
                    hi.sigma += h;
                }
                _ => {
                    lo.xi -= h;
                    hi.xi += h;
                }
            }
            let flo = gev_nll_grad(&lo, data).unwrap().nll;
            let fhi = gev_nll_grad(&hi, data).unwrap().nll;
            g[i] = (fhi - flo) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 100 draws simulated from each parameter set (so the data always
        // sit inside the support), gradient checked against central
        // differences at h = 1e-6 * scale.
        for &xi in &[-0.35, -0.1, 0.0, 0.12, 0.4] {
            let p = GevParams::new(0.4, 1.3, xi).unwrap();
            let data: Vec<f64> = (0..100)
                .map(|_| gev_quantile(rng.gen_range(0.001..0.999), &p).unwrap())
                .collect();
            let r = gev_nll_grad(&p, &data).unwrap();
            let g = r.grad.unwrap();
            let fd = fd_grad(&p, &data);
            for k in 0..3 {
                let denom = fd[k].abs().max(1e-3);
                assert!(
                    ((g[k] - fd[k]) / denom).abs() < 1e-4,
                    "xi={xi} component {k}: analytic {} vs fd {}",
                    g[k],
                    fd[k]
                );
            }
        }
    }

    #[test]
    fn pit_median_and_monotonicity() {
        let p = GevParams::new(2.0, 1.5, 0.2).unwrap();
        assert_abs_diff_eq!(pit(p.median(), &p).unwrap(), 0.5, epsilon = 1e-10);
        let mut prev = -1.0;
        let mut x = -4.0;
        while x < 20.0 {
            let u = pit(x, &p).unwrap();
            assert!(u >= prev);
            prev = u;
            x += 0.37;
        }
    }

    #[test]
    fn pit_of_simulated_data_is_uniform() {
        // Simulation oracle: PIT of GEV draws through the true parameters
        // must pass a KS test against U(0,1) at the 5% level.
        let p = GevParams::new(3.0, 2.0, 0.15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000usize;
        let mut u: Vec<f64> = (0..n)
            .map(|_| {
                let draw = gev_quantile(rng.gen_range(1e-12..1.0 - 1e-12), &p).unwrap();
                pit(draw, &p).unwrap()
            })
            .collect();
        u.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, ui) in u.iter().enumerate() {
            let ecdf_hi = (i + 1) as f64 / n as f64;
            let ecdf_lo = i as f64 / n as f64;
            ks = ks.max((ecdf_hi - ui).abs()).max((ui - ecdf_lo).abs());
        }
        let crit = 1.358 / (n as f64).sqrt(); // 5% KS critical value
        assert!(ks < crit, "KS statistic {ks} exceeds critical value {crit}");
    }

    #[test]
    fn return_level_examples() {
        let spec = ReturnSpec::new(100, 12).unwrap();
        let rl = return_level(&spec, &std_gumbel()).unwrap();
        assert_abs_diff_eq!(rl, -((-(0.99f64.ln())).ln()), epsilon = 1e-12);
        // Monotone in period.
        let spec2 = ReturnSpec::new(2, 12).unwrap();
        let mut prev = return_level(&spec2, &std_gumbel()).unwrap();
        for t in [5u32, 10, 20, 50, 100, 500] {
            let rl = return_level(&ReturnSpec::new(t, 12).unwrap(), &std_gumbel()).unwrap();
            assert!(rl > prev);
            prev = rl;
        }
        assert!(ReturnSpec::new(1, 12).is_err());
    }

    #[test]
    fn return_level_relative_change_semantics() {
        let spec = ReturnSpec::new(100, 12).unwrap();
        let p1990 = GevParams::new(10.0, 2.0, 0.1).unwrap();
        let p2023 = GevParams::new(11.0, 2.2, 0.1).unwrap();
        let rc = return_level_relative_change(&spec, &p1990, &p2023).unwrap();
        let a = return_level(&spec, &p1990).unwrap();
        let b = return_level(&spec, &p2023).unwrap();
        assert_abs_diff_eq!(rc, 100.0 * (b - a) / a, epsilon = 1e-12);
        assert!(rc > 0.0);
    }

    #[test]
    fn crps_translation_and_nonnegativity() {
        let a = crps_gev(1.0, &std_gumbel()).unwrap();
        let b = crps_gev(2.0, &GevParams::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = GevParams::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(-0.45..0.45),
            )
            .unwrap();
            let y = rng.gen_range(-6.0..12.0);
            assert!(crps_gev(y, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn crps_closed_matches_quadrature_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let p = GevParams::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(0.3..3.5),
                rng.gen_range(-0.4..0.4),
            )
            .unwrap();
            let y = p.mu + p.sigma * rng.gen_range(-2.0..6.0);
            let closed = crps_gev_closed(y, &p);
            let numeric = crps_gev_numeric(y, &p, 1e-10);
            assert!(
                (closed - numeric).abs() < 1e-6,
                "closed {closed} vs numeric {numeric} at y={y}, p={p:?}"
            );
        }
    }

    #[test]
    fn crps_large_shape_uses_numeric_route() {
        let p = GevParams::new(0.0, 1.0, 1.2).unwrap();
        let v = crps_gev(1.0, &p).unwrap();
        assert!(v.is_finite() && v > 0.0);
        let p2 = GevParams::new(0.0, 1.0, 2.5).unwrap();
        assert!(crps_gev(1.0, &p2).unwrap().is_infinite());
    }
}
