//! Empirical tail-dependence estimation: pairwise chi_q from ranks, distance
//! binning with quantile bands, seasonal stratification.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{ExtvalError, Result};

/// Empirical CDF values by average ranks, rank/(n+1) convention.
pub fn rank_uniform(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut u = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // Average rank for the tie group, 1-based.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            u[k] = avg / (n as f64 + 1.0);
        }
        i = j + 1;
    }
    u
}

/// Empirical tail coefficient chi_q = #{F1(x1) > q and F2(x2) > q} / #{F2(x2) > q}.
///
/// Returns `None` when the denominator is empty (undefined estimate).
pub fn chi_q(x1: &[f64], x2: &[f64], q: f64) -> Result<Option<f64>> {
    if x1.len() != x2.len() {
        return Err(ExtvalError::data("chi_q: series lengths differ"));
    }
    if x1.len() < 20 {
        return Err(ExtvalError::data("chi_q: need at least 20 paired observations"));
    }
    if !(0.0 < q && q < 1.0) {
        return Err(ExtvalError::domain("chi_q: q must be in (0,1)"));
    }
    let u1 = rank_uniform(x1);
    let u2 = rank_uniform(x2);
    let mut joint = 0usize;
    let mut denom = 0usize;
    for (a, b) in u1.iter().zip(&u2) {
        if *b > q {
            denom += 1;
            if *a > q {
                joint += 1;
            }
        }
    }
    if denom == 0 {
        return Ok(None);
    }
    Ok(Some(joint as f64 / denom as f64))
}

/// One distance bin of a chi curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiBin {
    pub distance_km: f64,
    pub chi_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_pairs: usize,
}

/// Binned pairwise chi_q estimates against distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiCurve {
    pub q: f64,
    pub season: Option<String>,
    pub bins: Vec<ChiBin>,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

/// Group per-pair chi_q estimates into `n_bins` equal-count distance bins.
/// Point = in-bin mean; band = 2.5%/97.5% quantiles of the in-bin estimates.
pub fn binned_chi(
    estimates: &[(f64, f64)], // (distance_km, chi)
    q: f64,
    n_bins: usize,
    season: Option<String>,
) -> Result<ChiCurve> {
    if estimates.len() < 2 {
        return Err(ExtvalError::data("binned_chi: need at least 2 pairs"));
    }
    let mut pts: Vec<(f64, f64)> = estimates.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n_bins = n_bins.max(1).min(pts.len());
    let mut bins = Vec::with_capacity(n_bins);
    let per = pts.len() as f64 / n_bins as f64;
    let mut start = 0usize;
    for b in 0..n_bins {
        let end = if b + 1 == n_bins {
            pts.len()
        } else {
            (((b + 1) as f64 * per).round() as usize).clamp(start, pts.len())
        };
        if end <= start {
            // Empty bin: merged rightward.
            log::warn!("binned_chi: empty bin {b} merged rightward");
            continue;
        }
        let slice = &pts[start..end];
        let mid = slice.iter().map(|p| p.0).sum::<f64>() / slice.len() as f64;
        let mean = slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64;
        let mut chis: Vec<f64> = slice.iter().map(|p| p.1).collect();
        chis.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bins.push(ChiBin {
            distance_km: mid,
            chi_mean: mean,
            lower: quantile_sorted(&chis, 0.025),
            upper: quantile_sorted(&chis, 0.975),
            n_pairs: slice.len(),
        });
        start = end;
    }
    Ok(ChiCurve { q, season, bins })
}

impl ChiCurve {
    pub fn write_csv(&self, path: &Path, meta: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in meta {
            writeln!(file, "# {line}")?;
        }
        let mut wtr = csv::Writer::from_writer(file);
        wtr.write_record(["distance_km", "chi_mean", "lower", "upper", "n_pairs", "q", "season"])?;
        for b in &self.bins {
            wtr.write_record(&[
                format!("{}", b.distance_km),
                format!("{}", b.chi_mean),
                format!("{}", b.lower),
                format!("{}", b.upper),
                format!("{}", b.n_pairs),
                format!("{}", self.q),
                self.season.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn comonotone_and_countermonotone() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.73).sin() * 5.0 + i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(chi_q(&x, &x, 0.95).unwrap(), Some(1.0));
        assert_eq!(chi_q(&x, &y, 0.95).unwrap(), Some(0.0));
    }

    #[test]
    fn independent_uniforms_give_one_minus_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let q = 0.95;
        let chi = chi_q(&x, &y, q).unwrap().unwrap();
        assert!(
            (chi - (1.0 - q)).abs() < 0.01,
            "independent chi {chi} should be about {}",
            1.0 - q
        );
    }

    #[test]
    fn invariant_to_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.3 * rng.gen::<f64>()).collect();
        let x_t: Vec<f64> = x.iter().map(|v| (3.0 * v).exp()).collect();
        let y_t: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let a = chi_q(&x, &y, 0.9).unwrap().unwrap();
        let b = chi_q(&x_t, &y_t, 0.9).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 0.3 * rng.gen::<f64>()).collect();
        let a = chi_q(&x, &y, 0.9).unwrap().unwrap();
        let b = chi_q(&y, &x, 0.9).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undefined_when_denominator_empty() {
        // Heavy ties at the top: with all values equal, u = 0.5 < q, so no
        // exceedances and the estimate is flagged undefined.
        let x = vec![1.0; 50];
        let y = vec![1.0; 50];
        assert_eq!(chi_q(&x, &y, 0.95).unwrap(), None);
    }

    #[test]
    fn binned_curve_basics() {
        let estimates: Vec<(f64, f64)> = (0..70)
            .map(|i| (i as f64, 1.0 / (1.0 + i as f64 * 0.1)))
            .collect();
        let curve = binned_chi(&estimates, 0.95, 35, None).unwrap();
        assert_eq!(curve.bins.len(), 35);
        for w in curve.bins.windows(2) {
            assert!(w[1].distance_km > w[0].distance_km);
        }
        // Identical series everywhere -> flat curve at 1.
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0)).collect();
        let c = binned_chi(&flat, 0.99, 5, None).unwrap();
        for b in &c.bins {
            assert_eq!(b.chi_mean, 1.0);
            assert_eq!(b.lower, 1.0);
            assert_eq!(b.upper, 1.0);
        }
    }

    #[test]
    fn supported_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        for q in [0.95, 0.99, 0.999] {
            let c = chi_q(&x, &y, q).unwrap();
            assert!(c.is_some());
        }
    }
}
