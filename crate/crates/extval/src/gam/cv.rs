//! Cross-validated scoring (nLL and CRPS) and ranked model selection.
//!
//! nLL is the mean per-observation negative log-likelihood on held-out rows
//! and CRPS the mean held-out CRPS; both negatively oriented (smaller is
//! better), averaged unweighted over folds. Smoothing parameters are chosen
//! per formula by a coordinate-wise grid search scored with the same folds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::evd::{crps_gev, gev_logpdf};
use crate::table::MaximaTable;

use super::design::build_design;
use super::fit::{fit, penalized_labels, predict, FitSettings, MarginalFit};
use super::folds::FoldAssignment;
use super::formula::ModelFormula;

/// Held-out log densities are floored here (off-support observations).
const LOGPDF_FLOOR: f64 = -700.0;

/// Smoothing-parameter policy for cross-validated fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Smoothing {
    /// One lambda per penalized block, in `penalized_labels` order.
    Fixed(Vec<f64>),
    /// Coordinate-wise grid search over these values, scored by the same
    /// CV folds (CRPS objective), starting from all-ones.
    Grid(Vec<f64>),
}

impl Default for Smoothing {
    fn default() -> Self {
        // Log-spaced 1e-3 .. 1e3.
        Smoothing::Grid(vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3])
    }
}

#[derive(Debug, Clone)]
pub struct CvSettings {
    pub smoothing: Smoothing,
    pub fit: FitSettings,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings { smoothing: Smoothing::default(), fit: FitSettings::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvScore {
    pub nll: f64,
    pub crps: f64,
    pub valid_folds: usize,
    pub n_folds: usize,
    /// Held-out rows whose log density hit the floor.
    pub floored_rows: usize,
    /// Smoothing parameters the score was computed at.
    pub smoothing: Vec<f64>,
}

fn score_at_lambda(
    formula: &ModelFormula,
    table: &MaximaTable,
    folds: &FoldAssignment,
    lambda: &[f64],
    settings: &FitSettings,
) -> Result<CvScore> {
    let n_folds = folds.n_folds();
    let results: Vec<Option<(f64, f64, usize)>> = (1..=n_folds)
        .into_par_iter()
        .map(|k| {
            let train_mask: Vec<bool> = folds.fold.iter().map(|&f| f != k).collect();
            let test_mask: Vec<bool> = folds.fold.iter().map(|&f| f == k).collect();
            let train = table.subset(&train_mask).ok()?;
            let test = table.subset(&test_mask).ok()?;
            if train.is_empty() || test.is_empty() {
                return None;
            }
            let design = build_design(formula, &train).ok()?;
            let fitted = fit(&design, &train, lambda, settings).ok()?;
            let params = predict(&fitted, &test).ok()?;
            let mut nll_sum = 0.0;
            let mut crps_sum = 0.0;
            let mut floored = 0usize;
            for (row, p) in test.rows().iter().zip(&params) {
                let lp = gev_logpdf(row.maximum, p);
                if lp.is_finite() && lp > LOGPDF_FLOOR {
                    nll_sum -= lp;
                } else {
                    nll_sum -= LOGPDF_FLOOR;
                    floored += 1;
                }
                crps_sum += crps_gev(row.maximum, p).ok()?;
            }
            let n = test.len() as f64;
            Some((nll_sum / n, crps_sum / n, floored))
        })
        .collect();
    let mut nll = 0.0;
    let mut crps = 0.0;
    let mut valid = 0usize;
    let mut floored = 0usize;
    for r in &results {
        if let Some((a, b, f)) = r {
            nll += a;
            crps += b;
            floored += f;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(ExtvalError::numeric("every CV fold failed to fit"));
    }
    if valid < n_folds {
        log::warn!("cv: {} of {n_folds} folds failed and were skipped", n_folds - valid);
    }
    Ok(CvScore {
        nll: nll / valid as f64,
        crps: crps / valid as f64,
        valid_folds: valid,
        n_folds,
        floored_rows: floored,
        smoothing: lambda.to_vec(),
    })
}

/// Cross-validated score of one formula (smoothing chosen per the policy).
pub fn cv_score(
    formula: &ModelFormula,
    table: &MaximaTable,
    folds: &FoldAssignment,
    settings: &CvSettings,
) -> Result<CvScore> {
    let design = build_design(formula, table)?;
    let labels = penalized_labels(&design)?;
    match &settings.smoothing {
        Smoothing::Fixed(lambda) => {
            if lambda.len() != labels.len() {
                return Err(ExtvalError::config(format!(
                    "formula {} needs {} smoothing parameters, got {}",
                    formula.name,
                    labels.len(),
                    lambda.len()
                )));
            }
            score_at_lambda(formula, table, folds, lambda, &settings.fit)
        }
        Smoothing::Grid(grid) => {
            if labels.is_empty() {
                return score_at_lambda(formula, table, folds, &[], &settings.fit);
            }
            if grid.is_empty() {
                return Err(ExtvalError::config("empty smoothing grid"));
            }
            let mut lambda = vec![1.0; labels.len()];
            let mut best: Option<CvScore> = None;
            for k in 0..labels.len() {
                for &cand in grid {
                    let mut trial = lambda.clone();
                    trial[k] = cand;
                    let score = match score_at_lambda(formula, table, folds, &trial, &settings.fit)
                    {
                        Ok(s) => s,
                        Err(_) => continue,
                    };
                    let better = match &best {
                        None => true,
                        Some(b) => score.crps < b.crps,
                    };
                    if better {
                        lambda = trial;
                        best = Some(score);
                    }
                }
            }
            best.ok_or_else(|| ExtvalError::numeric("smoothing grid search found no valid fit"))
        }
    }
}

/// One row of the selection report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub name: String,
    pub nll: f64,
    pub crps: f64,
    pub n_columns: usize,
    pub valid_folds: usize,
    pub smoothing: Vec<f64>,
}

/// Score every candidate and rank by CRPS, nLL as tiebreak, then fewer
/// columns.
pub fn forward_select(
    candidates: &[ModelFormula],
    table: &MaximaTable,
    folds: &FoldAssignment,
    settings: &CvSettings,
) -> Result<Vec<SelectionEntry>> {
    let mut entries = Vec::new();
    for (i, f) in candidates.iter().enumerate() {
        let design = build_design(f, table)?;
        let score = cv_score(f, table, folds, settings)?;
        let name = if f.name.is_empty() { format!("M{i}") } else { f.name.clone() };
        entries.push(SelectionEntry {
            name,
            nll: score.nll,
            crps: score.crps,
            n_columns: design.total_cols(),
            valid_folds: score.valid_folds,
            smoothing: score.smoothing,
        });
    }
    entries.sort_by(|a, b| {
        a.crps
            .partial_cmp(&b.crps)
            .unwrap()
            .then(a.nll.partial_cmp(&b.nll).unwrap())
            .then(a.n_columns.cmp(&b.n_columns))
            .then(a.name.cmp(&b.name))
    });
    Ok(entries)
}

/// One-shot fit of a formula on the full table (for the CLI).
pub fn fit_full(
    formula: &ModelFormula,
    table: &MaximaTable,
    smoothing: &[f64],
    settings: &FitSettings,
) -> Result<MarginalFit> {
    let design = build_design(formula, table)?;
    fit(&design, table, smoothing, settings)
}
