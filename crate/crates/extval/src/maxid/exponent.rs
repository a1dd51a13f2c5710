//! Bivariate exponent function of the max-id process and its partials.
//!
//! V(z1, z2) = E_W[ kappa_bar( min(z1/W1+, z2/W2+) ) ] for (W1, W2) standard
//! bivariate normal with correlation rho. Conditioning on which site attains
//! the minimum reduces this to two smooth 1-D integrals,
//!
//!   V = int_0^inf phi(w) kappa_bar(z1/w) Phi(c1 w) dw
//!     + int_0^inf phi(w) kappa_bar(z2/w) Phi(c2 w) dw,
//!
//! with c1 = (z2/z1 - rho)/sqrt(1-rho^2) and c2 symmetric. Partials V1, V2
//! and the mixed V12 follow by differentiation under the integral sign
//! (cross-checked against finite differences in the tests).

use crate::error::{ExtvalError, Result};
use crate::num::{norm_cdf, norm_pdf};
use crate::quad::GaussLegendre;

use super::kernel::{kappa_bar_prime_unchecked, kappa_bar_unchecked};

pub const DEFAULT_NODES: usize = 60;

/// Integration beyond this w contributes < 1e-16 relative under phi(w).
const W_MAX: f64 = 8.5;

/// Quadrature context for expectations over the positive half of a standard
/// normal: nodes x_k in (0, W_MAX] with weights containing phi(x_k).
#[derive(Debug, Clone)]
pub struct ExponentQuad {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// V and its partial derivatives at one pair of thresholds.
#[derive(Debug, Clone, Copy)]
pub struct PairExponent {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v12: f64,
}

impl ExponentQuad {
    pub fn new(n_nodes: usize) -> Self {
        let gl = GaussLegendre::new(n_nodes.max(8));
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        for (x, w) in gl.mapped(0.0, W_MAX) {
            nodes.push(x);
            weights.push(w * norm_pdf(x));
        }
        ExponentQuad { nodes, weights }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes_iter(&self) -> impl Iterator<Item = &f64> {
        self.nodes.iter()
    }

    /// kappa_bar(z/x_k) and its r-derivative at every node, premultiplied by
    /// the node weight. Reused across pairs in the composite likelihood.
    pub fn kappa_rows(&self, z: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
        let mut kap = Vec::with_capacity(self.nodes.len());
        let mut kapd = Vec::with_capacity(self.nodes.len());
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let r = z / x;
            kap.push(w * kappa_bar_unchecked(r, beta));
            kapd.push(w * kappa_bar_prime_unchecked(r, beta));
        }
        (kap, kapd)
    }

    /// Single-site exponent V1site(z) = E[kappa_bar(z/W+)].
    pub fn v1site(&self, z: f64, beta: f64) -> f64 {
        let mut s = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            s += w * kappa_bar_unchecked(z / x, beta);
        }
        s
    }

    /// V1site and its z-derivative (which is negative).
    pub fn v1site_with_deriv(&self, z: f64, beta: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut d = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let r = z / x;
            s += w * kappa_bar_unchecked(r, beta);
            d += w * kappa_bar_prime_unchecked(r, beta) / x;
        }
        (s, d)
    }

    /// Exponent function with partials; requires rho < 1.
    pub fn v_pair(&self, z1: f64, z2: f64, rho12: f64, beta: f64) -> Result<PairExponent> {
        if !(z1 > 0.0 && z2 > 0.0) {
            return Err(ExtvalError::domain("v_pair needs z1, z2 > 0"));
        }
        if !(-1.0 < rho12 && rho12 < 1.0) {
            return Err(ExtvalError::domain(format!(
                "v_pair needs rho in (-1, 1), got {rho12}"
            )));
        }
        let (kap1, kapd1) = self.kappa_rows(z1, beta);
        let (kap2, kapd2) = self.kappa_rows(z2, beta);
        let out = self.v_pair_cached(z1, &kap1, &kapd1, z2, &kap2, &kapd2, rho12);
        if !out.v.is_finite() {
            return Err(ExtvalError::numeric(format!(
                "non-finite exponent at z1={z1}, z2={z2}, rho={rho12}, beta={beta}"
            )));
        }
        Ok(out)
    }

    /// Hot-path variant taking precomputed weighted kappa rows.
    #[allow(clippy::too_many_arguments)]
    pub fn v_pair_cached(
        &self,
        z1: f64,
        kap1: &[f64],
        kapd1: &[f64],
        z2: f64,
        kap2: &[f64],
        kapd2: &[f64],
        rho12: f64,
    ) -> PairExponent {
        let s = (1.0 - rho12 * rho12).sqrt();
        let c1 = (z2 / z1 - rho12) / s;
        let c2 = (z1 / z2 - rho12) / s;
        let dc1_dz1 = -z2 / (z1 * z1 * s);
        let dc1_dz2 = 1.0 / (z1 * s);
        let dc2_dz1 = 1.0 / (z2 * s);
        let dc2_dz2 = -z1 / (z2 * z2 * s);

        // Accumulate the five integral families for each site in one pass.
        let mut i_1 = 0.0; // int kap1 Phi(c1 x)
        let mut iz_1 = 0.0; // int kapd1/x Phi(c1 x)
        let mut ic_1 = 0.0; // int kap1 phi(c1 x) x
        let mut izc_1 = 0.0; // int kapd1 phi(c1 x)
        let mut ix3_1 = 0.0; // int kap1 phi(c1 x) x^3
        let mut i_2 = 0.0;
        let mut iz_2 = 0.0;
        let mut ic_2 = 0.0;
        let mut izc_2 = 0.0;
        let mut ix3_2 = 0.0;
        for (k, &x) in self.nodes.iter().enumerate() {
            let cdf1 = norm_cdf(c1 * x);
            let pdf1 = norm_pdf(c1 * x);
            i_1 += kap1[k] * cdf1;
            iz_1 += kapd1[k] / x * cdf1;
            ic_1 += kap1[k] * pdf1 * x;
            izc_1 += kapd1[k] * pdf1;
            ix3_1 += kap1[k] * pdf1 * x * x * x;

            let cdf2 = norm_cdf(c2 * x);
            let pdf2 = norm_pdf(c2 * x);
            i_2 += kap2[k] * cdf2;
            iz_2 += kapd2[k] / x * cdf2;
            ic_2 += kap2[k] * pdf2 * x;
            izc_2 += kapd2[k] * pdf2;
            ix3_2 += kap2[k] * pdf2 * x * x * x;
        }
        let icc_1 = -c1 * ix3_1;
        let icc_2 = -c2 * ix3_2;

        let v = i_1 + i_2;
        let v1 = iz_1 + ic_1 * dc1_dz1 + ic_2 * dc2_dz1;
        let v2 = iz_2 + ic_2 * dc2_dz2 + ic_1 * dc1_dz2;
        let v12 = izc_1 * dc1_dz2
            + icc_1 * dc1_dz1 * dc1_dz2
            + ic_1 * (-1.0 / (z1 * z1 * s))
            + izc_2 * dc2_dz1
            + icc_2 * dc2_dz2 * dc2_dz1
            + ic_2 * (-1.0 / (z2 * z2 * s));
        PairExponent { v, v1, v2, v12 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> ExponentQuad {
        ExponentQuad::new(DEFAULT_NODES)
    }

    #[test]
    fn symmetry_in_arguments() {
        let q = quad();
        for &(z1, z2, rho, beta) in
            &[(1.2, 0.7, 0.5, 1.0), (2.0, 1.5, 0.8, 0.5), (0.6, 0.9, -0.2, 2.0)]
        {
            let a = q.v_pair(z1, z2, rho, beta).unwrap();
            let b = q.v_pair(z2, z1, rho, beta).unwrap();
            assert!((a.v - b.v).abs() < 1e-12);
            assert!((a.v1 - b.v2).abs() < 1e-12);
            assert!((a.v12 - b.v12).abs() < 1e-12);
        }
    }

    #[test]
    fn comonotone_profile_matches_single_site() {
        // rho -> 1 with equal thresholds collapses to the single-site exponent.
        let q = quad();
        for beta in [0.2, 1.0] {
            for z in [0.5, 1.0, 2.5] {
                let v2 = q.v_pair(z, z, 1.0 - 1e-12, beta).unwrap().v;
                let v1 = q.v1site(z, beta);
                assert!(
                    (v2 - v1).abs() < 1e-6 * (1.0 + v1),
                    "beta={beta} z={z}: {v2} vs {v1}"
                );
            }
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..12 {
            let z1 = rng.gen_range(0.3..3.0);
            let z2 = rng.gen_range(0.3..3.0);
            let rho = rng.gen_range(0.0..0.95);
            let beta = rng.gen_range(0.05..2.0);
            let pe = q.v_pair(z1, z2, rho, beta).unwrap();
            let h = 1e-5;
            let vpp = q.v_pair(z1 + h, z2 + h, rho, beta).unwrap().v;
            let vpm = q.v_pair(z1 + h, z2 - h, rho, beta).unwrap().v;
            let vmp = q.v_pair(z1 - h, z2 + h, rho, beta).unwrap().v;
            let vmm = q.v_pair(z1 - h, z2 - h, rho, beta).unwrap().v;
            let vp0 = q.v_pair(z1 + h, z2, rho, beta).unwrap().v;
            let vm0 = q.v_pair(z1 - h, z2, rho, beta).unwrap().v;
            let v0p = q.v_pair(z1, z2 + h, rho, beta).unwrap().v;
            let v0m = q.v_pair(z1, z2 - h, rho, beta).unwrap().v;
            let fd1 = (vp0 - vm0) / (2.0 * h);
            let fd2 = (v0p - v0m) / (2.0 * h);
            let fd12 = (vpp - vpm - vmp + vmm) / (4.0 * h * h);
            assert!((pe.v1 - fd1).abs() < 1e-6 * (1.0 + fd1.abs()), "V1 {} vs {}", pe.v1, fd1);
            assert!((pe.v2 - fd2).abs() < 1e-6 * (1.0 + fd2.abs()), "V2 {} vs {}", pe.v2, fd2);
            assert!(
                (pe.v12 - fd12).abs() < 1e-4 * (1.0 + fd12.abs()),
                "V12 {} vs {}",
                pe.v12,
                fd12
            );
        }
    }

    #[test]
    fn measure_bounds() {
        // max(V1site(z1), V1site(z2)) <= V <= V1site(z1) + V1site(z2).
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let z1 = rng.gen_range(0.2..4.0);
            let z2 = rng.gen_range(0.2..4.0);
            let rho = rng.gen_range(-0.5..0.999);
            let beta = rng.gen_range(0.0..3.0);
            let v = q.v_pair(z1, z2, rho, beta).unwrap().v;
            let a = q.v1site(z1, beta);
            let b = q.v1site(z2, beta);
            assert!(v <= a + b + 1e-9, "subadditivity violated");
            assert!(v >= a.max(b) - 1e-9, "monotonicity violated");
        }
    }

    #[test]
    fn monte_carlo_oracle_smoke() {
        // Small-scale version of the acceptance check: 2e5 samples, 5 configs.
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..5 {
            let z1: f64 = rng.gen_range(0.4..2.5);
            let z2: f64 = rng.gen_range(0.4..2.5);
            let rho: f64 = rng.gen_range(0.0..0.9);
            let beta: f64 = rng.gen_range(0.1..1.5);
            let n = 200_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let g1: f64 = rng.sample(rand_distr::StandardNormal);
                let g2: f64 = rng.sample(rand_distr::StandardNormal);
                let w1 = g1;
                let w2 = rho * g1 + (1.0 - rho * rho).sqrt() * g2;
                let m1 = if w1 > 0.0 { z1 / w1 } else { f64::INFINITY };
                let m2 = if w2 > 0.0 { z2 / w2 } else { f64::INFINITY };
                let m = m1.min(m2);
                let val = if m.is_finite() {
                    kappa_bar_unchecked(m, beta)
                } else {
                    0.0
                };
                sum += val;
                sumsq += val * val;
            }
            let mc = sum / n as f64;
            let se = ((sumsq / n as f64 - mc * mc) / n as f64).sqrt();
            let v = q.v_pair(z1, z2, rho, beta).unwrap().v;
            assert!(
                (v - mc).abs() < 3.0 * se + 1e-7,
                "quadrature {v} vs MC {mc} +- {se} (z1={z1}, z2={z2}, rho={rho}, beta={beta})"
            );
        }
    }

    use super::super::kernel::kappa_bar_unchecked;

    #[test]
    fn node_count_refinement() {
        // Doubling the node count moves V by < 1e-8 relative on smooth configs.
        let q60 = ExponentQuad::new(60);
        let q120 = ExponentQuad::new(120);
        for &(z1, z2, rho, beta) in &[(1.0, 1.0, 0.5, 1.0), (0.5, 2.0, 0.3, 0.5)] {
            let a = q60.v_pair(z1, z2, rho, beta).unwrap().v;
            let b = q120.v_pair(z1, z2, rho, beta).unwrap().v;
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = quad();
        assert!(q.v_pair(0.0, 1.0, 0.5, 1.0).is_err());
        assert!(q.v_pair(1.0, 1.0, 1.0, 1.0).is_err());
    }
}
