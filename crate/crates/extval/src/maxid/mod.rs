//! Max-infinitely divisible dependence model.
//!
//! The process is Z(s) = max_i R_i W_i(s) with R_i the points of a Poisson
//! process on (0, inf) whose mean measure of [r, inf) is
//! kappa_bar(r) = r^-1 exp{(1 - r^beta)/beta}, and W a standard Gaussian
//! field with correlation rho(d) = exp{-(d/lambda)^nu}. Negative W values
//! cannot contribute to maxima: W enters through W+ = max(W, 0) and
//! kappa_bar(inf) = 0.
//!
//! Seasonality enters through ln beta(t) = a0_b + a1_b T(m_t) and
//! ln lambda(m_t) = a0_l + a1_l T(m_t).

mod chi;
mod exponent;
mod kernel;
mod margin;
mod pll;

pub use chi::model_chi;
pub use exponent::{ExponentQuad, PairExponent, DEFAULT_NODES};
pub use kernel::{kappa_bar, kappa_bar_inv, kappa_bar_prime, rho, BETA_EPS};
pub use margin::MarginGrid;
pub use pll::{
    clic_components, fit_dependence, pair_loglik, DependenceData, FitOptions, MaxIdFit,
    PllEvaluator,
};

use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};

/// Parameters of the covariate-dependent max-id model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxIdParams {
    pub alpha0_beta: f64,
    pub alpha1_beta: f64,
    pub alpha0_lambda: f64,
    pub alpha1_lambda: f64,
    /// Correlation smoothness, fixed at 1 by default.
    pub nu: f64,
}

impl MaxIdParams {
    pub fn new(
        alpha0_beta: f64,
        alpha1_beta: f64,
        alpha0_lambda: f64,
        alpha1_lambda: f64,
        nu: f64,
    ) -> Result<Self> {
        let p = MaxIdParams { alpha0_beta, alpha1_beta, alpha0_lambda, alpha1_lambda, nu };
        p.validate()?;
        Ok(p)
    }

    /// Stationary model with the given beta and lambda (alpha1 terms zero).
    pub fn stationary(beta: f64, lambda_km: f64, nu: f64) -> Result<Self> {
        if beta < 0.0 {
            return Err(ExtvalError::domain("beta must be >= 0"));
        }
        if lambda_km <= 0.0 {
            return Err(ExtvalError::domain("lambda must be > 0"));
        }
        // beta = 0 is represented by a very negative intercept.
        let a0b = if beta > 0.0 { beta.ln() } else { -40.0 };
        MaxIdParams::new(a0b, 0.0, lambda_km.ln(), 0.0, nu)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.alpha0_beta.is_finite()
            && self.alpha1_beta.is_finite()
            && self.alpha0_lambda.is_finite()
            && self.alpha1_lambda.is_finite();
        if !finite {
            return Err(ExtvalError::domain("max-id parameters must be finite"));
        }
        if !(self.nu > 0.0 && self.nu <= 2.0) {
            return Err(ExtvalError::domain(format!("nu must be in (0, 2], got {}", self.nu)));
        }
        Ok(())
    }

    /// beta(T) = exp(a0 + a1 T) > 0.
    pub fn beta(&self, t: f64) -> f64 {
        (self.alpha0_beta + self.alpha1_beta * t).min(200.0).exp()
    }

    /// lambda(T) = exp(a0 + a1 T) > 0, in km.
    pub fn lambda(&self, t: f64) -> f64 {
        (self.alpha0_lambda + self.alpha1_lambda * t).min(200.0).exp()
    }
}
