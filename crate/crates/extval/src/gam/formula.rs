//! Declarative additive model formulas for the three GEV parameters, with a
//! JSON representation used by the CLI configuration.

use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::table::MaximaTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothKind {
    Cubic,
    Cyclic,
}

/// One additive term of a parameter formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    /// gamma_i * z_i
    Linear { covariate: String },
    /// Spline l(z_i); cyclic kind wraps with the given period (months: 12).
    Smooth {
        covariate: String,
        kind: SmoothKind,
        #[serde(default = "default_knots")]
        knots: usize,
        #[serde(default)]
        period: Option<f64>,
    },
    /// Tensor-product spline l_te(z_a, z_b).
    Tensor {
        covariates: [String; 2],
        #[serde(default = "default_knots_pair")]
        knots: [usize; 2],
    },
    /// Random slope: a per-level deviation gamma_{i,g} * z_i for each level
    /// of the grouping column (e.g. month).
    RandomSlope { covariate: String, group: String },
}

fn default_knots() -> usize {
    10
}

fn default_knots_pair() -> [usize; 2] {
    [6, 6]
}

/// Formula for one GEV parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFormula {
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub terms: Vec<Term>,
}

fn default_true() -> bool {
    true
}

impl Default for ParamFormula {
    fn default() -> Self {
        ParamFormula { intercept: true, terms: Vec::new() }
    }
}

/// Additive structure for (mu, ln sigma, xi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFormula {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mu: ParamFormula,
    #[serde(default)]
    pub ln_sigma: ParamFormula,
    #[serde(default)]
    pub xi: ParamFormula,
}

impl ModelFormula {
    /// Intercept-only base model.
    pub fn intercept_only(name: &str) -> Self {
        ModelFormula {
            name: name.to_string(),
            mu: ParamFormula::default(),
            ln_sigma: ParamFormula::default(),
            xi: ParamFormula::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Check every referenced covariate against the table's columns.
    pub fn validate(&self, table: &MaximaTable) -> Result<()> {
        let check = |name: &str| -> Result<()> {
            table.column(name).map(|_| ()).map_err(|_| {
                ExtvalError::config(format!("formula references unknown covariate `{name}`"))
            })
        };
        for pf in [&self.mu, &self.ln_sigma, &self.xi] {
            for t in &pf.terms {
                match t {
                    Term::Linear { covariate } => check(covariate)?,
                    Term::Smooth { covariate, knots, .. } => {
                        check(covariate)?;
                        if *knots < 3 {
                            return Err(ExtvalError::config("smooth needs at least 3 knots"));
                        }
                    }
                    Term::Tensor { covariates, knots } => {
                        check(&covariates[0])?;
                        check(&covariates[1])?;
                        if knots[0] < 3 || knots[1] < 3 {
                            return Err(ExtvalError::config("tensor needs at least 3x3 knots"));
                        }
                    }
                    Term::RandomSlope { covariate, group } => {
                        check(covariate)?;
                        check(group)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{MaximaRow, MaximaTable};

    fn table() -> MaximaTable {
        let rows = vec![
            MaximaRow { site: "a".into(), lon: 12.0, lat: 46.0, month: 1, year: 2000, maximum: 5.0 },
            MaximaRow { site: "a".into(), lon: 12.0, lat: 46.0, month: 2, year: 2000, maximum: 6.0 },
        ];
        let mut t = MaximaTable::new(rows).unwrap();
        t.add_covariate("anomaly", vec![0.1, 0.2]).unwrap();
        t
    }

    #[test]
    fn json_round_trip() {
        let f = ModelFormula {
            name: "M3".into(),
            mu: ParamFormula {
                intercept: true,
                terms: vec![
                    Term::Linear { covariate: "anomaly".into() },
                    Term::Smooth {
                        covariate: "month".into(),
                        kind: SmoothKind::Cyclic,
                        knots: 12,
                        period: Some(12.0),
                    },
                ],
            },
            ln_sigma: ParamFormula::default(),
            xi: ParamFormula::default(),
        };
        let s = f.to_json().unwrap();
        let back = ModelFormula::from_json(&s).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn validates_covariate_names() {
        let t = table();
        let mut f = ModelFormula::intercept_only("M0");
        f.mu.terms.push(Term::Linear { covariate: "anomaly".into() });
        assert!(f.validate(&t).is_ok());
        f.mu.terms.push(Term::Linear { covariate: "missing".into() });
        let err = f.validate(&t).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
