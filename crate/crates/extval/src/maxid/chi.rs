//! Model-based tail-dependence coefficient:
//! chi_q(d) = (1 - 2q + C(q, q)) / (1 - q) with C(q, q) = exp(-V(z, z)),
//! z = G^-1(q), under the month's beta and lambda.

use crate::error::{ExtvalError, Result};

use super::exponent::ExponentQuad;
use super::kernel::rho;
use super::margin::MarginGrid;
use super::MaxIdParams;

pub fn model_chi(
    d_km: f64,
    t_m: f64,
    params: &MaxIdParams,
    q: f64,
    quad: &ExponentQuad,
) -> Result<f64> {
    if !(0.0 < q && q < 1.0) {
        return Err(ExtvalError::domain("model_chi needs q in (0,1)"));
    }
    params.validate()?;
    let beta = params.beta(t_m);
    let lambda = params.lambda(t_m);
    let r = rho(d_km, lambda, params.nu)?;
    let c_qq = if r >= 1.0 - 1e-12 {
        // Comonotone at zero distance: C(q, q) = q.
        q
    } else {
        let grid = MarginGrid::new(beta, quad)?;
        let z = grid.inverse(quad, q)?;
        (-quad.v_pair(z, z, r, beta)?.v).exp()
    };
    Ok(((1.0 - 2.0 * q + c_qq) / (1.0 - q)).clamp(0.0, 1.0))
}
