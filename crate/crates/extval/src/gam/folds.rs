//! Spatio-temporal cross-validation folds: k-means spatial clusters crossed
//! with interleaved month clusters (temporal cluster k holds months
//! k, k+3, k+6, k+9).

use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::geo::kmeans;
use crate::table::MaximaTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Per row, 1-based.
    pub spatial: Vec<usize>,
    pub temporal: Vec<usize>,
    /// fold = (spatial - 1) * n_temporal + temporal, in 1..=n_spatial*n_temporal.
    pub fold: Vec<usize>,
    pub n_spatial: usize,
    pub n_temporal: usize,
}

impl FoldAssignment {
    pub fn n_folds(&self) -> usize {
        self.n_spatial * self.n_temporal
    }
}

pub fn make_folds(
    table: &MaximaTable,
    n_spatial: usize,
    n_temporal: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    let sites = table.sites();
    if sites.len() < n_spatial {
        return Err(ExtvalError::config(format!(
            "need at least {n_spatial} sites for {n_spatial} spatial clusters, got {}",
            sites.len()
        )));
    }
    if !(1..=12).contains(&n_temporal) {
        return Err(ExtvalError::config("n_temporal must be in 1..=12"));
    }
    let coords: Vec<(f64, f64)> = sites.iter().map(|(_, p)| (p.lon, p.lat)).collect();
    let labels = kmeans(&coords, n_spatial, seed, 50)?;
    let site_cluster: std::collections::BTreeMap<&str, usize> = sites
        .iter()
        .zip(&labels)
        .map(|((name, _), &l)| (name.as_str(), l + 1))
        .collect();
    let mut spatial = Vec::with_capacity(table.len());
    let mut temporal = Vec::with_capacity(table.len());
    let mut fold = Vec::with_capacity(table.len());
    for r in table.rows() {
        let s = site_cluster[r.site.as_str()];
        let t = ((r.month as usize - 1) % n_temporal) + 1;
        spatial.push(s);
        temporal.push(t);
        fold.push((s - 1) * n_temporal + t);
    }
    Ok(FoldAssignment { spatial, temporal, fold, n_spatial, n_temporal })
}
