//! Design matrices for the GEV parameters: terms resolved against a training
//! table (knots at covariate quantiles, random-slope levels) so that the same
//! structure can be re-evaluated on new covariate rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{ExtvalError, Result};
use crate::smooth::{SplineBasis, TensorBasis};
use crate::table::MaximaTable;

use super::formula::{ModelFormula, ParamFormula, SmoothKind, Term};

/// A formula term with its data-dependent pieces resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BuiltTerm {
    Intercept,
    Linear {
        covariate: String,
    },
    Smooth {
        covariate: String,
        kind: SmoothKind,
        knots: Vec<f64>,
        period: Option<f64>,
    },
    Tensor {
        covariates: [String; 2],
        knots_a: Vec<f64>,
        knots_b: Vec<f64>,
    },
    RandomSlope {
        covariate: String,
        group: String,
        levels: Vec<i64>,
    },
}

impl BuiltTerm {
    pub fn n_cols(&self) -> usize {
        match self {
            BuiltTerm::Intercept => 1,
            BuiltTerm::Linear { .. } => 1,
            BuiltTerm::Smooth { knots, .. } => knots.len(),
            BuiltTerm::Tensor { knots_a, knots_b, .. } => knots_a.len() * knots_b.len(),
            BuiltTerm::RandomSlope { levels, .. } => levels.len(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BuiltTerm::Intercept => "intercept".to_string(),
            BuiltTerm::Linear { covariate } => format!("linear:{covariate}"),
            BuiltTerm::Smooth { covariate, .. } => format!("smooth:{covariate}"),
            BuiltTerm::Tensor { covariates, .. } => {
                format!("tensor:{}x{}", covariates[0], covariates[1])
            }
            BuiltTerm::RandomSlope { covariate, group, .. } => {
                format!("rslope:{covariate}|{group}")
            }
        }
    }

    /// Penalty matrix for penalized terms (None for intercept/linear).
    pub fn penalty(&self) -> Result<Option<DMatrix<f64>>> {
        match self {
            BuiltTerm::Intercept | BuiltTerm::Linear { .. } => Ok(None),
            BuiltTerm::Smooth { kind, knots, period, .. } => {
                let basis = match kind {
                    SmoothKind::Cubic => SplineBasis::cubic(knots.clone())?,
                    SmoothKind::Cyclic => {
                        SplineBasis::cyclic(knots.clone(), period.unwrap_or(12.0))?
                    }
                };
                Ok(Some(basis.penalty().clone()))
            }
            BuiltTerm::Tensor { knots_a, knots_b, .. } => {
                let t = TensorBasis::new(
                    SplineBasis::cubic(knots_a.clone())?,
                    SplineBasis::cubic(knots_b.clone())?,
                );
                Ok(Some(t.penalty().clone()))
            }
            BuiltTerm::RandomSlope { levels, .. } => {
                Ok(Some(DMatrix::identity(levels.len(), levels.len())))
            }
        }
    }

    /// Whether the fit must absorb a sum-to-zero constraint for this block.
    pub fn needs_constraint(&self) -> bool {
        matches!(self, BuiltTerm::Smooth { .. } | BuiltTerm::Tensor { .. })
    }

    /// Evaluate the term's columns for every row of `table`.
    pub fn eval(&self, table: &MaximaTable) -> Result<DMatrix<f64>> {
        let n = table.len();
        match self {
            BuiltTerm::Intercept => Ok(DMatrix::from_element(n, 1, 1.0)),
            BuiltTerm::Linear { covariate } => {
                let v = table.column(covariate)?;
                Ok(DMatrix::from_iterator(n, 1, v))
            }
            BuiltTerm::Smooth { covariate, kind, knots, period } => {
                let v = table.column(covariate)?;
                let basis = match kind {
                    SmoothKind::Cubic => SplineBasis::cubic(knots.clone())?,
                    SmoothKind::Cyclic => {
                        SplineBasis::cyclic(knots.clone(), period.unwrap_or(12.0))?
                    }
                };
                basis.eval_matrix(&v)
            }
            BuiltTerm::Tensor { covariates, knots_a, knots_b } => {
                let va = table.column(&covariates[0])?;
                let vb = table.column(&covariates[1])?;
                let t = TensorBasis::new(
                    SplineBasis::cubic(knots_a.clone())?,
                    SplineBasis::cubic(knots_b.clone())?,
                );
                let mut m = DMatrix::zeros(n, t.n_basis());
                for i in 0..n {
                    for (j, v) in t.eval_row(va[i], vb[i]).into_iter().enumerate() {
                        m[(i, j)] = v;
                    }
                }
                Ok(m)
            }
            BuiltTerm::RandomSlope { covariate, group, levels } => {
                let v = table.column(covariate)?;
                let g = table.column(group)?;
                let mut m = DMatrix::zeros(n, levels.len());
                for i in 0..n {
                    let gi = g[i].round() as i64;
                    let Some(j) = levels.iter().position(|&l| l == gi) else {
                        return Err(ExtvalError::config(format!(
                            "unknown {group} level {gi} in random slope"
                        )));
                    };
                    m[(i, j)] = v[i];
                }
                Ok(m)
            }
        }
    }
}

/// Resolved terms for one GEV parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTerms {
    pub terms: Vec<BuiltTerm>,
}

impl ParamTerms {
    pub fn n_cols(&self) -> usize {
        self.terms.iter().map(|t| t.n_cols()).sum()
    }

    pub fn design_matrix(&self, table: &MaximaTable) -> Result<DMatrix<f64>> {
        let n = table.len();
        let p = self.n_cols();
        let mut x = DMatrix::zeros(n, p);
        let mut col = 0;
        for t in &self.terms {
            let block = t.eval(table)?;
            x.columns_mut(col, block.ncols()).copy_from(&block);
            col += block.ncols();
        }
        Ok(x)
    }

    /// (label, column range, penalty, needs_constraint) per penalized block.
    pub fn penalized_blocks(&self) -> Result<Vec<(String, std::ops::Range<usize>, DMatrix<f64>, bool)>> {
        let mut out = Vec::new();
        let mut col = 0;
        for t in &self.terms {
            let w = t.n_cols();
            if let Some(p) = t.penalty()? {
                out.push((t.label(), col..col + w, p, t.needs_constraint()));
            }
            col += w;
        }
        Ok(out)
    }
}

/// Design structure for all three GEV parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrices {
    pub mu: ParamTerms,
    pub ln_sigma: ParamTerms,
    pub xi: ParamTerms,
    /// Training ranges of every referenced covariate (extrapolation warning).
    pub covariate_ranges: BTreeMap<String, (f64, f64)>,
}

impl DesignMatrices {
    pub fn n_cols(&self) -> [usize; 3] {
        [self.mu.n_cols(), self.ln_sigma.n_cols(), self.xi.n_cols()]
    }

    pub fn total_cols(&self) -> usize {
        self.n_cols().iter().sum()
    }
}

fn quantile_knots(values: &[f64], n_knots: usize) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = values.to_vec();
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
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    if knots.len() < 3 {
        return Err(ExtvalError::config(
            "covariate has too few distinct values for a spline",
        ));
    }
    Ok(knots)
}

fn build_param(pf: &ParamFormula, table: &MaximaTable) -> Result<ParamTerms> {
    let mut terms = Vec::new();
    if pf.intercept {
        terms.push(BuiltTerm::Intercept);
    }
    for t in &pf.terms {
        match t {
            Term::Linear { covariate } => {
                terms.push(BuiltTerm::Linear { covariate: covariate.clone() })
            }
            Term::Smooth { covariate, kind, knots, period } => {
                let values = table.column(covariate)?;
                let built = match kind {
                    SmoothKind::Cubic => BuiltTerm::Smooth {
                        covariate: covariate.clone(),
                        kind: *kind,
                        knots: quantile_knots(&values, *knots)?,
                        period: None,
                    },
                    SmoothKind::Cyclic => {
                        let period = period.unwrap_or(12.0);
                        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                        // Evenly spaced knots covering one period (one per
                        // month for the month spline).
                        let k: Vec<f64> = (0..*knots)
                            .map(|j| min + period * j as f64 / *knots as f64)
                            .collect();
                        BuiltTerm::Smooth {
                            covariate: covariate.clone(),
                            kind: *kind,
                            knots: k,
                            period: Some(period),
                        }
                    }
                };
                terms.push(built);
            }
            Term::Tensor { covariates, knots } => {
                let va = table.column(&covariates[0])?;
                let vb = table.column(&covariates[1])?;
                terms.push(BuiltTerm::Tensor {
                    covariates: covariates.clone(),
                    knots_a: quantile_knots(&va, knots[0])?,
                    knots_b: quantile_knots(&vb, knots[1])?,
                });
            }
            Term::RandomSlope { covariate, group } => {
                let g = table.column(group)?;
                let mut levels: Vec<i64> = g.iter().map(|v| v.round() as i64).collect();
                levels.sort_unstable();
                levels.dedup();
                terms.push(BuiltTerm::RandomSlope {
                    covariate: covariate.clone(),
                    group: group.clone(),
                    levels,
                });
            }
        }
    }
    Ok(ParamTerms { terms })
}

/// Resolve a formula against a training table.
pub fn build_design(formula: &ModelFormula, table: &MaximaTable) -> Result<DesignMatrices> {
    formula.validate(table)?;
    if table.is_empty() {
        return Err(ExtvalError::data("cannot build a design on an empty table"));
    }
    let mu = build_param(&formula.mu, table)?;
    let ln_sigma = build_param(&formula.ln_sigma, table)?;
    let xi = build_param(&formula.xi, table)?;
    let mut ranges = BTreeMap::new();
    for pf in [&formula.mu, &formula.ln_sigma, &formula.xi] {
        for t in &pf.terms {
            let names: Vec<&String> = match t {
                Term::Linear { covariate } | Term::Smooth { covariate, .. } => vec![covariate],
                Term::Tensor { covariates, .. } => covariates.iter().collect(),
                Term::RandomSlope { covariate, group } => vec![covariate, group],
            };
            for name in names {
                let v = table.column(name)?;
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                ranges.insert(name.clone(), (lo, hi));
            }
        }
    }
    Ok(DesignMatrices { mu, ln_sigma, xi, covariate_ranges: ranges })
}
