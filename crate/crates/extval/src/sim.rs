//! Simulation of correlated Gaussian fields and max-id fields for
//! parameter-recovery studies and synthetic pipeline rehearsal.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{ExtvalError, Result};
use crate::geo::{haversine, LonLat};
use crate::maxid::{kappa_bar_inv, rho, ExponentQuad, MaxIdParams};
use crate::num::norm_quantile;
use crate::table::{Pair, PairSet};

/// Site coordinates with their pairwise distance matrix.
#[derive(Debug, Clone)]
pub struct SiteLayout {
    pub names: Vec<String>,
    /// Distances in km, symmetric with zero diagonal.
    pub distances: Vec<Vec<f64>>,
}

impl SiteLayout {
    /// Layout on a planar km grid with Euclidean distances.
    pub fn from_plane(coords: &[(f64, f64)]) -> Result<Self> {
        let n = coords.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] =
                    ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
            }
        }
        let names = (0..n).map(|i| format!("s{i:03}")).collect();
        let layout = SiteLayout { names, distances: d };
        layout.validate()?;
        Ok(layout)
    }

    /// Layout from lon/lat sites with haversine distances.
    pub fn from_lonlat(sites: &[(String, LonLat)]) -> Result<Self> {
        let n = sites.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] = haversine(sites[i].1, sites[j].1);
            }
        }
        let layout = SiteLayout {
            names: sites.iter().map(|(s, _)| s.clone()).collect(),
            distances: d,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn n_sites(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.distances.len() != n || self.distances.iter().any(|r| r.len() != n) {
            return Err(ExtvalError::data("distance matrix shape mismatch"));
        }
        for i in 0..n {
            if self.distances[i][i] != 0.0 {
                return Err(ExtvalError::data("distance matrix diagonal must be zero"));
            }
            for j in 0..n {
                if (self.distances[i][j] - self.distances[j][i]).abs() > 1e-9 {
                    return Err(ExtvalError::data("distance matrix must be symmetric"));
                }
            }
        }
        // Triangle inequality spot check (full check is cubic; fine at these sizes).
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.distances[i][j] > self.distances[i][k] + self.distances[k][j] + 1e-9 {
                        return Err(ExtvalError::data("triangle inequality violated"));
                    }
                }
            }
        }
        Ok(())
    }

    /// All unordered pairs with the layout's distances.
    pub fn pairs(&self) -> Result<PairSet> {
        let mut pairs = Vec::new();
        for i in 0..self.n_sites() {
            for j in (i + 1)..self.n_sites() {
                pairs.push(Pair {
                    site_a: self.names[i].clone(),
                    site_b: self.names[j].clone(),
                    distance_km: self.distances[i][j],
                    weight: 1.0,
                });
            }
        }
        PairSet::new(pairs)
    }
}

/// Derive a per-replicate RNG stream (splitmix64 over seed and index).
fn derived_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut x = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    ChaCha20Rng::seed_from_u64(x)
}

fn correlation_cholesky(layout: &SiteLayout, lambda: f64, nu: f64) -> Result<DMatrix<f64>> {
    let n = layout.n_sites();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] = rho(layout.distances[i][j], lambda, nu)?;
        }
    }
    match c.clone().cholesky() {
        Some(ch) => Ok(ch.l()),
        None => {
            let jittered = c + DMatrix::identity(n, n) * 1e-10;
            jittered
                .cholesky()
                .map(|ch| ch.l())
                .ok_or_else(|| ExtvalError::numeric("correlation matrix not PD after 1e-10 jitter"))
        }
    }
}

/// Simulate `n` replicates of a correlated standard normal vector.
pub fn sim_gauss(
    layout: &SiteLayout,
    lambda: f64,
    nu: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let l = correlation_cholesky(layout, lambda, nu)?;
    let p = layout.n_sites();
    let out: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = derived_rng(seed, r as u64);
            let eps: Vec<f64> = (0..p).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            (0..p)
                .map(|i| (0..=i).map(|j| l[(i, j)] * eps[j]).sum())
                .collect()
        })
        .collect();
    Ok(out)
}

/// Options for the max-id simulator.
#[derive(Debug, Clone)]
pub struct MaxIdSimOptions {
    /// Residual update-probability budget for the stopping rule.
    pub eps: f64,
    /// Quadrature nodes for the marginal transform.
    pub nodes: usize,
    /// Hard cap on Poisson points per replicate.
    pub max_points: usize,
}

impl Default for MaxIdSimOptions {
    fn default() -> Self {
        MaxIdSimOptions { eps: 1e-6, nodes: crate::maxid::DEFAULT_NODES, max_points: 1_000_000 }
    }
}

/// Simulate max-id replicates on the uniform scale.
///
/// Z(s) = max_i R_i W_i(s)+ with R_i = kappa_bar^-1(E_1 + ... + E_i) from
/// unit exponentials. A replicate stops once R_i * w_hi falls below the
/// smallest running site maximum, where w_hi is the 1 - eps/1000 normal
/// quantile, bounding the chance of any further update by roughly eps.
/// Site maxima are mapped to uniforms through the max-id margin G.
///
/// `t_per_replicate` supplies each replicate's temperature covariate.
pub fn sim_maxid(
    layout: &SiteLayout,
    params: &MaxIdParams,
    t_per_replicate: &[f64],
    seed: u64,
    opts: &MaxIdSimOptions,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if t_per_replicate.is_empty() {
        return Err(ExtvalError::data("no replicates requested"));
    }
    let quad = ExponentQuad::new(opts.nodes);
    let w_hi = norm_quantile(1.0 - (opts.eps * 1e-3).clamp(1e-12, 0.49));
    // One Cholesky per distinct lambda (seasonal models give one per month).
    let mut lambdas: Vec<f64> = t_per_replicate.iter().map(|&t| params.lambda(t)).collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let chols: Vec<(f64, DMatrix<f64>)> = lambdas
        .iter()
        .map(|&lam| correlation_cholesky(layout, lam, params.nu).map(|l| (lam, l)))
        .collect::<Result<Vec<_>>>()?;
    let p = layout.n_sites();

    t_per_replicate
        .par_iter()
        .enumerate()
        .map(|(r, &t)| {
            let beta = params.beta(t);
            let lambda = params.lambda(t);
            let l = &chols
                .iter()
                .find(|(lam, _)| *lam == lambda)
                .expect("cholesky prepared for every lambda")
                .1;
            let mut rng = derived_rng(seed, r as u64);
            let mut z = vec![0.0f64; p];
            let mut e_sum = 0.0f64;
            let mut eps_buf = vec![0.0f64; p];
            let mut n_points = 0usize;
            loop {
                n_points += 1;
                if n_points > opts.max_points {
                    return Err(ExtvalError::numeric(
                        "max-id simulation exceeded the point budget",
                    ));
                }
                let e: f64 = rng.sample(rand_distr::Exp1);
                e_sum += e;
                let radius = kappa_bar_inv(e_sum, beta)?;
                let z_min = z.iter().cloned().fold(f64::INFINITY, f64::min);
                if z_min > 0.0 && radius * w_hi < z_min {
                    break;
                }
                for slot in eps_buf.iter_mut() {
                    *slot = rng.sample(rand_distr::StandardNormal);
                }
                for i in 0..p {
                    let mut w = 0.0;
                    for j in 0..=i {
                        w += l[(i, j)] * eps_buf[j];
                    }
                    if w > 0.0 {
                        let candidate = radius * w;
                        if candidate > z[i] {
                            z[i] = candidate;
                        }
                    }
                }
            }
            // Uniform margins through G(z) = exp(-V1site(z)).
            Ok(z
                .iter()
                .map(|&zi| (-quad.v1site(zi, beta)).exp().clamp(1e-15, 1.0 - 1e-15))
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::chi_q;
    use crate::maxid::model_chi;

    fn grid_layout(n_side: usize, spacing_km: f64) -> SiteLayout {
        let mut coords = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                coords.push((i as f64 * spacing_km, j as f64 * spacing_km));
            }
        }
        SiteLayout::from_plane(&coords).unwrap()
    }

    #[test]
    fn single_site_standard_normal_moments() {
        let layout = SiteLayout::from_plane(&[(0.0, 0.0)]).unwrap();
        let draws = sim_gauss(&layout, 10.0, 1.0, 100_000, 7).unwrap();
        let n = draws.len() as f64;
        let mean: f64 = draws.iter().map(|v| v[0]).sum::<f64>() / n;
        let var: f64 = draws.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn tiny_range_gives_independence() {
        let layout = grid_layout(2, 50.0);
        let draws = sim_gauss(&layout, 1e-6, 1.0, 100_000, 3).unwrap();
        let n = draws.len() as f64;
        for a in 0..4 {
            for b in (a + 1)..4 {
                let ma: f64 = draws.iter().map(|v| v[a]).sum::<f64>() / n;
                let mb: f64 = draws.iter().map(|v| v[b]).sum::<f64>() / n;
                let cov: f64 =
                    draws.iter().map(|v| (v[a] - ma) * (v[b] - mb)).sum::<f64>() / n;
                assert!(cov.abs() < 0.01, "cov[{a},{b}] = {cov}");
            }
        }
    }

    #[test]
    fn empirical_correlation_matches_rho() {
        let layout = grid_layout(2, 15.0);
        let lambda = 25.0;
        let draws = sim_gauss(&layout, lambda, 1.0, 100_000, 11).unwrap();
        let n = draws.len() as f64;
        for a in 0..4 {
            for b in (a + 1)..4 {
                let ma: f64 = draws.iter().map(|v| v[a]).sum::<f64>() / n;
                let mb: f64 = draws.iter().map(|v| v[b]).sum::<f64>() / n;
                let cov: f64 =
                    draws.iter().map(|v| (v[a] - ma) * (v[b] - mb)).sum::<f64>() / n;
                let want = rho(layout.distances[a][b], lambda, 1.0).unwrap();
                assert!(
                    (cov - want).abs() < 0.01,
                    "corr[{a},{b}] = {cov}, want {want}"
                );
            }
        }
    }

    #[test]
    fn gauss_deterministic_by_seed() {
        let layout = grid_layout(2, 10.0);
        let a = sim_gauss(&layout, 20.0, 1.0, 50, 42).unwrap();
        let b = sim_gauss(&layout, 20.0, 1.0, 50, 42).unwrap();
        assert_eq!(a, b);
        let c = sim_gauss(&layout, 20.0, 1.0, 50, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn maxid_comonotone_at_zero_distance() {
        let layout = SiteLayout::from_plane(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let params = MaxIdParams::stationary(0.5, 30.0, 1.0).unwrap();
        let t = vec![0.0; 50];
        let u = sim_maxid(&layout, &params, &t, 5, &MaxIdSimOptions::default()).unwrap();
        for rep in &u {
            assert!(
                (rep[0] - rep[1]).abs() < 1e-3,
                "coincident sites must agree: {} vs {}",
                rep[0],
                rep[1]
            );
        }
    }

    #[test]
    fn maxid_margins_are_uniform() {
        // KS test at the 1% level on one site's uniforms.
        let layout = grid_layout(2, 20.0);
        let params = MaxIdParams::stationary(0.5, 30.0, 1.0).unwrap();
        let t = vec![0.0; 5000];
        let u = sim_maxid(&layout, &params, &t, 99, &MaxIdSimOptions::default()).unwrap();
        let mut u0: Vec<f64> = u.iter().map(|r| r[0]).collect();
        u0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = u0.len();
        let mut ks: f64 = 0.0;
        for (i, ui) in u0.iter().enumerate() {
            ks = ks
                .max(((i + 1) as f64 / n as f64 - ui).abs())
                .max((ui - i as f64 / n as f64).abs());
        }
        let crit = 1.628 / (n as f64).sqrt();
        assert!(ks < crit, "KS {ks} vs 1% critical value {crit}");
    }

    #[test]
    fn maxid_chi_close_to_model_smoke() {
        // Small-n version of the acceptance consistency check.
        let lambda = 30.0;
        let layout = SiteLayout::from_plane(&[(0.0, 0.0), (lambda, 0.0)]).unwrap();
        let params = MaxIdParams::stationary(0.5, lambda, 1.0).unwrap();
        let t = vec![0.0; 6000];
        let u = sim_maxid(&layout, &params, &t, 17, &MaxIdSimOptions::default()).unwrap();
        let x1: Vec<f64> = u.iter().map(|r| r[0]).collect();
        let x2: Vec<f64> = u.iter().map(|r| r[1]).collect();
        let q = 0.95;
        let emp = chi_q(&x1, &x2, q).unwrap().unwrap();
        let quad = ExponentQuad::new(crate::maxid::DEFAULT_NODES);
        let model = model_chi(lambda, 0.0, &params, q, &quad).unwrap();
        assert!(
            (emp - model).abs() < 0.05,
            "empirical chi {emp} vs model {model}"
        );
    }

    #[test]
    fn maxid_deterministic_by_seed() {
        let layout = grid_layout(2, 25.0);
        let params = MaxIdParams::stationary(0.7, 20.0, 1.0).unwrap();
        let t = vec![0.0; 20];
        let a = sim_maxid(&layout, &params, &t, 1, &MaxIdSimOptions::default()).unwrap();
        let b = sim_maxid(&layout, &params, &t, 1, &MaxIdSimOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_coupling_in_beta() {
        // Larger beta weakens tail dependence under shared random numbers;
        // checked statistically over seeds.
        let lambda = 30.0;
        let layout = SiteLayout::from_plane(&[(0.0, 0.0), (0.5 * lambda, 0.0)]).unwrap();
        let mut non_increase = 0;
        let seeds = 20;
        for s in 0..seeds {
            let t = vec![0.0; 2000];
            let lo = MaxIdParams::stationary(0.2, lambda, 1.0).unwrap();
            let hi = MaxIdParams::stationary(1.5, lambda, 1.0).unwrap();
            let ulo = sim_maxid(&layout, &lo, &t, s, &MaxIdSimOptions::default()).unwrap();
            let uhi = sim_maxid(&layout, &hi, &t, s, &MaxIdSimOptions::default()).unwrap();
            let chi_lo = chi_q(
                &ulo.iter().map(|r| r[0]).collect::<Vec<_>>(),
                &ulo.iter().map(|r| r[1]).collect::<Vec<_>>(),
                0.95,
            )
            .unwrap()
            .unwrap();
            let chi_hi = chi_q(
                &uhi.iter().map(|r| r[0]).collect::<Vec<_>>(),
                &uhi.iter().map(|r| r[1]).collect::<Vec<_>>(),
                0.95,
            )
            .unwrap()
            .unwrap();
            if chi_hi <= chi_lo + 0.02 {
                non_increase += 1;
            }
        }
        assert!(
            non_increase >= seeds * 9 / 10,
            "beta monotonicity held in only {non_increase}/{seeds} seeds"
        );
    }

    #[test]
    fn layout_validation() {
        let mut layout = grid_layout(2, 10.0);
        layout.distances[0][1] = 5.0;
        assert!(layout.validate().is_err());
    }
}
