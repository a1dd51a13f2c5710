//! LOESS: locally weighted polynomial regression with tricube weights and a
//! nearest-neighbour bandwidth. Degree-2 local fits with span 0.75 match the
//! defaults used for smoothing the temperature-anomaly covariate. No
//! robustness iterations.

use nalgebra::{DMatrix, DVector};

use crate::error::{ExtvalError, Result};

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// Fitted values at each observed x.
pub fn loess(x: &[f64], y: &[f64], span: f64, degree: usize) -> Result<Vec<f64>> {
    loess_at(x, y, x, span, degree)
}

/// Fitted values at arbitrary target points.
pub fn loess_at(x: &[f64], y: &[f64], targets: &[f64], span: f64, degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n != y.len() {
        return Err(ExtvalError::config("loess: x and y lengths differ"));
    }
    if n < degree + 2 {
        return Err(ExtvalError::config("loess: need at least degree + 2 points"));
    }
    if !(0.0 < span && span <= 1.0) {
        return Err(ExtvalError::config("loess: span must be in (0, 1]"));
    }
    let q = ((span * n as f64).ceil() as usize).clamp(degree + 1, n);
    if q < degree + 1 {
        return Err(ExtvalError::config("loess: span * n must be >= degree + 1"));
    }
    let x_min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x_max <= x_min {
        return Err(ExtvalError::config("loess: all x values are equal"));
    }

    let mut out = Vec::with_capacity(targets.len());
    let mut dist = vec![0.0f64; n];
    for &x0 in targets {
        for (i, &xi) in x.iter().enumerate() {
            dist[i] = (xi - x0).abs();
        }
        let mut sorted = dist.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dq = sorted[q - 1];
        if dq <= 0.0 {
            // A pile of duplicates at x0; widen to the nearest positive distance.
            dq = sorted
                .iter()
                .copied()
                .find(|&d| d > 0.0)
                .unwrap_or(1e-12 * (x_max - x_min));
        }
        out.push(weighted_poly_fit(x, y, x0, dq, degree)?);
    }
    Ok(out)
}

/// Weighted least-squares polynomial fit centred at x0, returning the fitted
/// value there (the intercept of the local polynomial).
fn weighted_poly_fit(x: &[f64], y: &[f64], x0: f64, bandwidth: f64, degree: usize) -> Result<f64> {
    let p = degree + 1;
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    let mut wsum = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let w = tricube((xi - x0).abs() / bandwidth);
        if w <= 0.0 {
            continue;
        }
        wsum += w;
        let dx = xi - x0;
        let mut pow = vec![1.0; p];
        for j in 1..p {
            pow[j] = pow[j - 1] * dx;
        }
        for a in 0..p {
            xtwy[a] += w * pow[a] * yi;
            for b in 0..p {
                xtwx[(a, b)] += w * pow[a] * pow[b];
            }
        }
    }
    if wsum <= 0.0 {
        return Err(ExtvalError::numeric("loess: no points with positive weight"));
    }
    // Tiny ridge keeps near-degenerate neighbourhoods solvable.
    for a in 0..p {
        xtwx[(a, a)] += 1e-12 * wsum.max(1.0);
    }
    let sol = xtwx
        .lu()
        .solve(&xtwy)
        .ok_or_else(|| ExtvalError::numeric("loess: singular local system"))?;
    Ok(sol[0])
}
