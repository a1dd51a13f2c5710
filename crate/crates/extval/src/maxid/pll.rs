//! Pairwise composite likelihood for the max-id copula: the bivariate copula
//! density, the composite log-likelihood over all site pairs and time
//! replicates, quasi-Newton maximization, Hessian standard errors and CLIC.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::optim::{self, OptimOptions};
use crate::table::{PairSet, UniformTable};

use super::exponent::ExponentQuad;
use super::kernel::rho;
use super::margin::MarginGrid;
use super::MaxIdParams;

/// log(1e-300): floor for non-positive numeric densities.
const LOG_FLOOR: f64 = -690.77552789821368;

/// One time replicate (month, year) of the uniform-margin process.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub month: u32,
    pub year: i32,
    /// Per-site uniform values, indexed like `DependenceData::sites`.
    pub u: Vec<Option<f64>>,
}

/// Uniform table reorganized by replicate with a fixed site order.
#[derive(Debug, Clone)]
pub struct DependenceData {
    pub sites: Vec<String>,
    pub replicates: Vec<Replicate>,
}

impl DependenceData {
    pub fn from_table(table: &UniformTable) -> Result<Self> {
        let mut sites: Vec<String> = table.rows.iter().map(|r| r.site.clone()).collect();
        sites.sort();
        sites.dedup();
        let site_idx: BTreeMap<&str, usize> =
            sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut reps: BTreeMap<(i32, u32), Vec<Option<f64>>> = BTreeMap::new();
        for r in &table.rows {
            let slot = reps
                .entry((r.year, r.month))
                .or_insert_with(|| vec![None; sites.len()]);
            let i = site_idx[r.site.as_str()];
            if slot[i].is_some() {
                return Err(ExtvalError::data(format!(
                    "duplicate uniform value for ({}, {}, {})",
                    r.site, r.year, r.month
                )));
            }
            slot[i] = Some(r.u);
        }
        let replicates = reps
            .into_iter()
            .map(|((year, month), u)| Replicate { month, year, u })
            .collect();
        Ok(DependenceData { sites, replicates })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }
}

/// Bivariate copula log-density at one pair of uniform observations.
///
/// With z_i = G^-1(u_i): ln c = -V + ln(V1 V2 - V12) - ln g(z1) - ln g(z2).
pub fn pair_loglik(
    u1: f64,
    u2: f64,
    d_km: f64,
    t_m: f64,
    params: &MaxIdParams,
    quad: &ExponentQuad,
) -> Result<f64> {
    if !(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0) {
        return Err(ExtvalError::domain("pair_loglik needs strictly interior u values"));
    }
    params.validate()?;
    let beta = params.beta(t_m);
    let lambda = params.lambda(t_m);
    let r = rho(d_km, lambda, params.nu)?;
    if r >= 1.0 - 1e-12 {
        return Err(ExtvalError::domain(
            "pair density is degenerate at rho = 1 (zero distance)",
        ));
    }
    let grid = MarginGrid::new(beta, quad)?;
    let z1 = grid.inverse(quad, u1)?;
    let z2 = grid.inverse(quad, u2)?;
    let (kap1, kapd1) = quad.kappa_rows(z1, beta);
    let (kap2, kapd2) = quad.kappa_rows(z2, beta);
    let lng1 = ln_density_from_rows(&kap1, &kapd1, quad);
    let lng2 = ln_density_from_rows(&kap2, &kapd2, quad);
    let pe = quad.v_pair_cached(z1, &kap1, &kapd1, z2, &kap2, &kapd2, r);
    let bracket = pe.v1 * pe.v2 - pe.v12;
    if !(bracket > 0.0) || !pe.v.is_finite() {
        log::warn!("pair_loglik: non-positive density bracket, flooring at 1e-300");
        return Ok(LOG_FLOOR);
    }
    Ok(-pe.v + bracket.ln() - lng1 - lng2)
}

/// ln g(z) from precomputed weighted kappa rows:
/// V1site = sum(kap), dV1site/dz = sum(kapd / x), g = exp(-V1) * (-dV1).
fn ln_density_from_rows(kap: &[f64], kapd: &[f64], quad: &ExponentQuad) -> f64 {
    let v1: f64 = kap.iter().sum();
    let dv1: f64 = kapd
        .iter()
        .zip(quad.nodes_iter())
        .map(|(kd, x)| kd / x)
        .sum();
    -v1 + (-dv1).ln()
}

struct SiteCache {
    z: f64,
    ln_g: f64,
    kap: Vec<f64>,
    kapd: Vec<f64>,
}

struct MonthCtx {
    lambda: f64,
    grid: MarginGrid,
}

/// Prepared composite-likelihood evaluator over fixed data and pairs.
pub struct PllEvaluator<'a> {
    data: &'a DependenceData,
    /// (site index a, site index b, distance, weight)
    pairs: Vec<(usize, usize, f64, f64)>,
    temps: BTreeMap<u32, f64>,
    quad: ExponentQuad,
}

impl<'a> PllEvaluator<'a> {
    pub fn new(
        data: &'a DependenceData,
        pairs: &PairSet,
        temps: &BTreeMap<u32, f64>,
        nodes: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ExtvalError::data("empty pair set"));
        }
        let site_idx: BTreeMap<&str, usize> = data
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut resolved = Vec::with_capacity(pairs.len());
        for p in &pairs.pairs {
            let a = *site_idx.get(p.site_a.as_str()).ok_or_else(|| {
                ExtvalError::data(format!("pair site {} not in uniform table", p.site_a))
            })?;
            let b = *site_idx.get(p.site_b.as_str()).ok_or_else(|| {
                ExtvalError::data(format!("pair site {} not in uniform table", p.site_b))
            })?;
            resolved.push((a, b, p.distance_km, p.weight));
        }
        for rep in &data.replicates {
            if !temps.contains_key(&rep.month) {
                return Err(ExtvalError::config(format!(
                    "no temperature covariate for month {}",
                    rep.month
                )));
            }
        }
        Ok(PllEvaluator {
            data,
            pairs: resolved,
            temps: temps.clone(),
            quad: ExponentQuad::new(nodes),
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_replicates(&self) -> usize {
        self.data.replicates.len()
    }

    /// Margin contexts per distinct month and per-(replicate, site) caches.
    fn site_caches(
        &self,
        params: &MaxIdParams,
    ) -> Result<(BTreeMap<u32, MonthCtx>, Vec<Vec<Option<SiteCache>>>)> {
        params.validate()?;
        let mut months: Vec<u32> = self.data.replicates.iter().map(|r| r.month).collect();
        months.sort_unstable();
        months.dedup();
        let mut ctxs = BTreeMap::new();
        for m in months {
            let t = self.temps[&m];
            let beta = params.beta(t);
            let lambda = params.lambda(t);
            if !(lambda > 0.0 && lambda.is_finite() && beta.is_finite()) {
                return Err(ExtvalError::numeric("beta/lambda overflow"));
            }
            let grid = MarginGrid::new(beta, &self.quad)?;
            ctxs.insert(m, MonthCtx { lambda, grid });
        }
        let caches: Vec<Vec<Option<SiteCache>>> = self
            .data
            .replicates
            .par_iter()
            .map(|rep| {
                let ctx = &ctxs[&rep.month];
                let beta = ctx.grid.beta();
                rep.u
                    .iter()
                    .map(|maybe_u| {
                        maybe_u.map(|u| {
                            let z = ctx.grid.inverse(&self.quad, u)?;
                            let (kap, kapd) = self.quad.kappa_rows(z, beta);
                            let ln_g = ln_density_from_rows(&kap, &kapd, &self.quad);
                            Ok(SiteCache { z, ln_g, kap, kapd })
                        })
                        .transpose()
                    })
                    .collect::<Result<Vec<Option<SiteCache>>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ctxs, caches))
    }

    /// Composite log-likelihood; summation order is pair index then time.
    pub fn pll(&self, params: &MaxIdParams) -> Result<f64> {
        let (total, _floored) = self.pll_detailed(params)?;
        Ok(total)
    }

    /// PLL plus the count of floored (non-positive numeric density) terms.
    pub fn pll_detailed(&self, params: &MaxIdParams) -> Result<(f64, usize)> {
        let (ctxs, caches) = self.site_caches(params)?;
        let per_pair: Vec<(f64, usize)> = self
            .pairs
            .par_iter()
            .map(|&(a, b, d, w)| {
                let mut sum = 0.0;
                let mut floored = 0usize;
                for (rep, cache) in self.data.replicates.iter().zip(&caches) {
                    let (Some(ca), Some(cb)) = (&cache[a], &cache[b]) else {
                        continue;
                    };
                    let ctx = &ctxs[&rep.month];
                    let r = match rho(d, ctx.lambda, params.nu) {
                        Ok(r) => r.min(1.0 - 1e-12),
                        Err(_) => {
                            floored += 1;
                            sum += w * LOG_FLOOR;
                            continue;
                        }
                    };
                    let pe = self
                        .quad
                        .v_pair_cached(ca.z, &ca.kap, &ca.kapd, cb.z, &cb.kap, &cb.kapd, r);
                    let bracket = pe.v1 * pe.v2 - pe.v12;
                    if bracket > 0.0 && pe.v.is_finite() {
                        sum += w * (-pe.v + bracket.ln() - ca.ln_g - cb.ln_g);
                    } else {
                        floored += 1;
                        sum += w * LOG_FLOOR;
                    }
                }
                (sum, floored)
            })
            .collect();
        let mut total = 0.0;
        let mut floored = 0usize;
        for (s, f) in per_pair {
            total += s;
            floored += f;
        }
        if floored > 0 {
            log::warn!("pll: floored {floored} non-positive density terms");
        }
        Ok((total, floored))
    }

    /// Per-replicate composite log-likelihood contributions (for the score
    /// covariance K); index matches `data.replicates`.
    pub fn per_replicate(&self, params: &MaxIdParams) -> Result<Vec<f64>> {
        let (ctxs, caches) = self.site_caches(params)?;
        let per_pair: Vec<Vec<(usize, f64)>> = self
            .pairs
            .par_iter()
            .map(|&(a, b, d, w)| {
                let mut out = Vec::new();
                for (i, (rep, cache)) in self.data.replicates.iter().zip(&caches).enumerate() {
                    let (Some(ca), Some(cb)) = (&cache[a], &cache[b]) else {
                        continue;
                    };
                    let ctx = &ctxs[&rep.month];
                    let Ok(r) = rho(d, ctx.lambda, params.nu) else {
                        out.push((i, w * LOG_FLOOR));
                        continue;
                    };
                    let r = r.min(1.0 - 1e-12);
                    let pe = self
                        .quad
                        .v_pair_cached(ca.z, &ca.kap, &ca.kapd, cb.z, &cb.kap, &cb.kapd, r);
                    let bracket = pe.v1 * pe.v2 - pe.v12;
                    let v = if bracket > 0.0 && pe.v.is_finite() {
                        w * (-pe.v + bracket.ln() - ca.ln_g - cb.ln_g)
                    } else {
                        w * LOG_FLOOR
                    };
                    out.push((i, v));
                }
                out
            })
            .collect();
        let mut per_rep = vec![0.0; self.data.replicates.len()];
        for contributions in per_pair {
            for (i, v) in contributions {
                per_rep[i] += v;
            }
        }
        Ok(per_rep)
    }
}

fn theta_to_params(theta: &[f64], seasonal: bool, nu: f64) -> MaxIdParams {
    if seasonal {
        MaxIdParams {
            alpha0_beta: theta[0],
            alpha1_beta: theta[1],
            alpha0_lambda: theta[2],
            alpha1_lambda: theta[3],
            nu,
        }
    } else {
        MaxIdParams {
            alpha0_beta: theta[0],
            alpha1_beta: 0.0,
            alpha0_lambda: theta[1],
            alpha1_lambda: 0.0,
            nu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seasonal: bool,
    pub nu: f64,
    pub nodes: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub compute_clic: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seasonal: false,
            nu: 1.0,
            nodes: super::exponent::DEFAULT_NODES,
            max_iterations: 200,
            grad_tol: 1e-6,
            compute_clic: true,
        }
    }
}

/// Result of a pairwise composite-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxIdFit {
    pub params: MaxIdParams,
    pub free_names: Vec<String>,
    /// Hessian-based standard errors, aligned with `free_names`.
    pub se: Vec<f64>,
    pub pll: f64,
    pub clic: Option<f64>,
    pub tr_jinv_k: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n_pairs: usize,
    pub n_replicates: usize,
    pub floored_densities: usize,
}

/// Maximize the PLL from the documented starts (alpha0_beta = 0,
/// alpha0_lambda = ln median pair distance, alpha1 terms 0).
pub fn fit_dependence(
    data: &DependenceData,
    pairs: &PairSet,
    temps: &BTreeMap<u32, f64>,
    opts: &FitOptions,
) -> Result<MaxIdFit> {
    let eval = PllEvaluator::new(data, pairs, temps, opts.nodes)?;
    let median_d = pairs.median_distance();
    let theta0: Vec<f64> = if opts.seasonal {
        vec![0.0, 0.0, median_d.ln(), 0.0]
    } else {
        vec![0.0, median_d.ln()]
    };
    let names: Vec<String> = if opts.seasonal {
        vec![
            "alpha0_beta".into(),
            "alpha1_beta".into(),
            "alpha0_lambda".into(),
            "alpha1_lambda".into(),
        ]
    } else {
        vec!["alpha0_beta".into(), "alpha0_lambda".into()]
    };
    let objective = |theta: &[f64]| -> f64 {
        let p = theta_to_params(theta, opts.seasonal, opts.nu);
        match eval.pll(&p) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let opt = optim::minimize_fd(
        &theta0,
        &OptimOptions {
            max_iterations: opts.max_iterations,
            grad_tol: opts.grad_tol,
            ..Default::default()
        },
        1e-5,
        &objective,
    )
    .map_err(|e| match e {
        ExtvalError::NonConvergence { iterations, best } => {
            ExtvalError::NonConvergence { iterations, best }
        }
        other => other,
    })?;

    let params = theta_to_params(&opt.x, opts.seasonal, opts.nu);
    let (pll_value, floored) = eval.pll_detailed(&params)?;

    // Hessian of -PLL for standard errors.
    let hess = optim::fd_hessian(&opt.x, 1e-4, &objective);
    let dim = opt.x.len();
    let mut j = nalgebra::DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for k in 0..dim {
            j[(i, k)] = 0.5 * (hess[i][k] + hess[k][i]);
        }
    }
    let j_inv = invert_with_ridge(&j)?;
    let se: Vec<f64> = (0..dim).map(|i| j_inv[(i, i)].max(0.0).sqrt()).collect();

    let (tr, clic) = if opts.compute_clic {
        let (tr, clic) = clic_components(&eval, &opt.x, opts.seasonal, opts.nu, pll_value)?;
        (Some(tr), Some(clic))
    } else {
        (None, None)
    };

    Ok(MaxIdFit {
        params,
        free_names: names,
        se,
        pll: pll_value,
        clic,
        tr_jinv_k: tr,
        converged: opt.converged,
        iterations: opt.iterations,
        n_pairs: eval.n_pairs(),
        n_replicates: eval.n_replicates(),
        floored_densities: floored,
    })
}

fn invert_with_ridge(j: &nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
    if let Some(inv) = j.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return Ok(inv);
        }
    }
    log::warn!("singular information matrix; retrying with ridge 1e-8");
    let dim = j.nrows();
    let scale = (0..dim).map(|i| j[(i, i)].abs()).sum::<f64>() / dim as f64;
    let ridged = j + nalgebra::DMatrix::identity(dim, dim) * (1e-8 * scale.max(1.0));
    ridged.try_inverse().ok_or_else(|| {
        ExtvalError::numeric("information matrix singular even with ridge 1e-8")
    })
}

/// CLIC = -2 PLL + 2 tr(J^-1 K): J is the numeric Hessian of -PLL, K the
/// empirical covariance of per-replicate score contributions (scores by
/// central finite differences). Returns (tr(J^-1 K), CLIC).
pub fn clic_components(
    eval: &PllEvaluator<'_>,
    theta_hat: &[f64],
    seasonal: bool,
    nu: f64,
    pll_value: f64,
) -> Result<(f64, f64)> {
    let dim = theta_hat.len();
    let objective = |theta: &[f64]| -> f64 {
        let p = theta_to_params(theta, seasonal, nu);
        eval.pll(&p).map(|v| -v).unwrap_or(f64::INFINITY)
    };
    let hess = optim::fd_hessian(theta_hat, 1e-4, objective);
    let mut j = nalgebra::DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            j[(a, b)] = 0.5 * (hess[a][b] + hess[b][a]);
        }
    }
    // Per-replicate scores of the PLL by central differences.
    let n_rep = eval.n_replicates();
    let mut scores = vec![vec![0.0; dim]; n_rep];
    for a in 0..dim {
        let h = 1e-5 * (1.0 + theta_hat[a].abs());
        let mut tp = theta_hat.to_vec();
        tp[a] += h;
        let plus = eval.per_replicate(&theta_to_params(&tp, seasonal, nu))?;
        tp[a] = theta_hat[a] - h;
        let minus = eval.per_replicate(&theta_to_params(&tp, seasonal, nu))?;
        for i in 0..n_rep {
            scores[i][a] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    let mut mean = vec![0.0; dim];
    for s in &scores {
        for a in 0..dim {
            mean[a] += s[a];
        }
    }
    for m in mean.iter_mut() {
        *m /= n_rep as f64;
    }
    let mut k = nalgebra::DMatrix::zeros(dim, dim);
    for s in &scores {
        for a in 0..dim {
            for b in 0..dim {
                k[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]);
            }
        }
    }
    let j_inv = invert_with_ridge(&j)?;
    let tr = (j_inv * k).trace();
    Ok((tr, -2.0 * pll_value + 2.0 * tr))
}
