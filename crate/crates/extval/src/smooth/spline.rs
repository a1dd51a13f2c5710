//! Cubic and cyclic cubic regression splines in the value parameterization
//! of Wood (2017, ch. 5): coefficients are the function values at the knots,
//! the curve is the (periodic) natural cubic interpolant, and the curvature
//! penalty int f''(x)^2 dx is exact, P = D' B^{-1} D.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineKind {
    Cubic,
    CyclicCubic,
}

/// A one-dimensional regression spline basis over fixed knots.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    kind: SplineKind,
    knots: Vec<f64>,
    /// Interval widths; cyclic bases carry the wrap interval as the last entry.
    widths: Vec<f64>,
    period: Option<f64>,
    /// Maps knot values to knot second derivatives, m = curv * beta.
    curv: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 3 {
        return Err(ExtvalError::config("spline needs at least 3 knots"));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(ExtvalError::config("knots must be finite"));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExtvalError::config("knots must be strictly increasing"));
    }
    Ok(())
}

impl SplineBasis {
    /// Natural cubic regression spline on the given knots.
    pub fn cubic(knots: Vec<f64>) -> Result<Self> {
        check_knots(&knots)?;
        let k = knots.len();
        let widths: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        // Interior system B m_int = D beta, natural conditions m_1 = m_k = 0.
        let ki = k - 2;
        let mut b = DMatrix::zeros(ki, ki);
        let mut d = DMatrix::zeros(ki, k);
        for i in 0..ki {
            let h0 = widths[i];
            let h1 = widths[i + 1];
            b[(i, i)] = (h0 + h1) / 3.0;
            if i + 1 < ki {
                b[(i, i + 1)] = h1 / 6.0;
                b[(i + 1, i)] = h1 / 6.0;
            }
            d[(i, i)] = 1.0 / h0;
            d[(i, i + 1)] = -1.0 / h0 - 1.0 / h1;
            d[(i, i + 2)] = 1.0 / h1;
        }
        let b_inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| ExtvalError::numeric("singular spline system"))?;
        let curv_int = &b_inv * &d;
        let mut curv = DMatrix::zeros(k, k);
        curv.rows_mut(1, ki).copy_from(&curv_int);
        let penalty = d.transpose() * &b_inv * &d;
        Ok(SplineBasis {
            kind: SplineKind::Cubic,
            knots,
            widths,
            period: None,
            curv,
            penalty,
        })
    }

    /// Cubic spline with knots at quantiles of the observed covariate.
    pub fn cubic_from_data(values: &[f64], n_knots: usize) -> Result<Self> {
        if n_knots < 3 {
            return Err(ExtvalError::config("need at least 3 knots"));
        }
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.len() < n_knots {
            return Err(ExtvalError::config("fewer observations than knots"));
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut knots: Vec<f64> = (0..n_knots)
            .map(|i| {
                let p = i as f64 / (n_knots - 1) as f64;
                let pos = p * (v.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                if lo + 1 < v.len() {
                    v[lo] * (1.0 - frac) + v[lo + 1] * frac
                } else {
                    v[lo]
                }
            })
            .collect();
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + b.abs()));
        Self::cubic(knots)
    }

    /// Cyclic cubic regression spline: `knots` are the distinct knot
    /// positions within one period; the point `knots[0] + period` is
    /// identified with `knots[0]`.
    pub fn cyclic(knots: Vec<f64>, period: f64) -> Result<Self> {
        check_knots(&knots)?;
        if !(period.is_finite() && period > 0.0) {
            return Err(ExtvalError::config("period must be positive"));
        }
        let k = knots.len();
        if knots[k - 1] - knots[0] >= period {
            return Err(ExtvalError::config("knot span must be smaller than the period"));
        }
        let mut widths: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        widths.push(knots[0] + period - knots[k - 1]); // wrap interval
        // Periodic system over all k knots (indices mod k).
        let mut b = DMatrix::zeros(k, k);
        let mut d = DMatrix::zeros(k, k);
        for j in 0..k {
            let prev = (j + k - 1) % k;
            let next = (j + 1) % k;
            let h_prev = widths[prev];
            let h_j = widths[j];
            b[(j, j)] = (h_prev + h_j) / 3.0;
            b[(j, prev)] += h_prev / 6.0;
            b[(j, next)] += h_j / 6.0;
            d[(j, prev)] += 1.0 / h_prev;
            d[(j, j)] += -1.0 / h_prev - 1.0 / h_j;
            d[(j, next)] += 1.0 / h_j;
        }
        let b_inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| ExtvalError::numeric("singular cyclic spline system"))?;
        let curv = &b_inv * &d;
        let penalty = d.transpose() * &b_inv * &d;
        Ok(SplineBasis {
            kind: SplineKind::CyclicCubic,
            knots,
            widths,
            period: Some(period),
            curv,
            penalty,
        })
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len()
    }

    /// Exact curvature penalty matrix (symmetric PSD).
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// One basis-evaluation row; entry j is the weight on the value at knot j.
    pub fn eval_row(&self, x: f64) -> Vec<f64> {
        let k = self.knots.len();
        let mut row = vec![0.0; k];
        match self.kind {
            SplineKind::CyclicCubic => {
                let period = self.period.unwrap();
                let x0 = self.knots[0];
                let mut t = (x - x0).rem_euclid(period) + x0;
                // Guard against rounding pushing t to x0 + period.
                if t >= x0 + period {
                    t = x0;
                }
                // Locate the interval (the wrap interval is index k-1).
                let j = match self.knots.iter().rposition(|&kn| kn <= t) {
                    Some(j) => j,
                    None => k - 1,
                };
                let next = (j + 1) % k;
                let h = self.widths[j];
                let x_lo = self.knots[j];
                let a_minus = (x_lo + h - t) / h;
                let a_plus = (t - x_lo) / h;
                let c_minus = ((x_lo + h - t).powi(3) / h - h * (x_lo + h - t)) / 6.0;
                let c_plus = ((t - x_lo).powi(3) / h - h * (t - x_lo)) / 6.0;
                row[j] += a_minus;
                row[next] += a_plus;
                for col in 0..k {
                    row[col] += c_minus * self.curv[(j, col)] + c_plus * self.curv[(next, col)];
                }
            }
            SplineKind::Cubic => {
                let last = k - 1;
                if x <= self.knots[0] {
                    // Linear extrapolation from the left boundary.
                    let h = self.widths[0];
                    let dx = x - self.knots[0];
                    row[0] += 1.0 - dx / h;
                    row[1] += dx / h;
                    for col in 0..k {
                        row[col] -= dx * h / 6.0 * self.curv[(1, col)];
                    }
                } else if x >= self.knots[last] {
                    let h = self.widths[last - 1];
                    let dx = x - self.knots[last];
                    row[last] += 1.0 + dx / h;
                    row[last - 1] -= dx / h;
                    for col in 0..k {
                        row[col] += dx * h / 6.0 * self.curv[(last - 1, col)];
                    }
                } else {
                    let j = self
                        .knots
                        .windows(2)
                        .position(|w| x >= w[0] && x < w[1])
                        .unwrap_or(last - 1);
                    let h = self.widths[j];
                    let a_minus = (self.knots[j + 1] - x) / h;
                    let a_plus = (x - self.knots[j]) / h;
                    let c_minus = ((self.knots[j + 1] - x).powi(3) / h - h * (self.knots[j + 1] - x)) / 6.0;
                    let c_plus = ((x - self.knots[j]).powi(3) / h - h * (x - self.knots[j])) / 6.0;
                    row[j] += a_minus;
                    row[j + 1] += a_plus;
                    for col in 0..k {
                        row[col] += c_minus * self.curv[(j, col)] + c_plus * self.curv[(j + 1, col)];
                    }
                }
            }
        }
        row
    }

    /// Basis matrix (len(x) x n_basis).
    pub fn eval_matrix(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(ExtvalError::domain("basis evaluation needs finite inputs"));
        }
        let k = self.n_basis();
        let mut m = DMatrix::zeros(xs.len(), k);
        for (i, &x) in xs.iter().enumerate() {
            let row = self.eval_row(x);
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

/// Tensor product of two marginal spline bases: rows are the row-wise
/// Kronecker product, the penalty is the sum of the marginal penalties
/// expanded with Kronecker identities.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    pub a: SplineBasis,
    pub b: SplineBasis,
    penalty: DMatrix<f64>,
}

impl TensorBasis {
    pub fn new(a: SplineBasis, b: SplineBasis) -> Self {
        let (pa, pb) = (a.n_basis(), b.n_basis());
        let mut penalty = DMatrix::zeros(pa * pb, pa * pb);
        let sa = a.penalty();
        let sb = b.penalty();
        for i in 0..pa {
            for j in 0..pa {
                for l in 0..pb {
                    // S_a (x) I
                    penalty[(i * pb + l, j * pb + l)] += sa[(i, j)];
                }
            }
        }
        for l in 0..pb {
            for m in 0..pb {
                for i in 0..pa {
                    // I (x) S_b
                    penalty[(i * pb + l, i * pb + m)] += sb[(l, m)];
                }
            }
        }
        TensorBasis { a, b, penalty }
    }

    pub fn n_basis(&self) -> usize {
        self.a.n_basis() * self.b.n_basis()
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn eval_row(&self, x: f64, y: f64) -> Vec<f64> {
        let ra = self.a.eval_row(x);
        let rb = self.b.eval_row(y);
        let mut row = Vec::with_capacity(ra.len() * rb.len());
        for va in &ra {
            for vb in &rb {
                row.push(va * vb);
            }
        }
        row
    }
}

/// Checks that a penalty matrix is symmetric PSD (eigenvalues >= -1e-10).
pub fn validate_penalty(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(ExtvalError::numeric("penalty must be square"));
    }
    for i in 0..n {
        for j in 0..n {
            if (p[(i, j)] - p[(j, i)]).abs() > 1e-9 * (1.0 + p[(i, j)].abs()) {
                return Err(ExtvalError::numeric("penalty not symmetric"));
            }
        }
    }
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| e < -1e-10) {
        return Err(ExtvalError::numeric("penalty has negative eigenvalues"));
    }
    Ok(())
}
