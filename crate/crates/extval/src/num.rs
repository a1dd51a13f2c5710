//! Scalar special functions shared by the distribution and dependence code.

use statrs::function::erf;
use statrs::function::gamma;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile (Acklam's rational approximation polished by one
/// Halley step; relative error well below 1e-13 over (0, 1)).
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_quantile needs p in (0,1)");
    // Acklam coefficients.
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Halley refinement against the exact CDF.
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Exponential integral E1(x) for x > 0.
///
/// Series for x <= 1 (Abramowitz & Stegun 5.1.11), modified Lentz continued
/// fraction for x > 1 (5.1.22).
pub fn exp_int_e1(x: f64) -> f64 {
    assert!(x > 0.0, "exp_int_e1 needs x > 0");
    if x > 700.0 {
        return 0.0;
    }
    if x <= 1.0 {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..=40 {
            let kf = k as f64;
            term *= -x / kf;
            let add = -term / kf;
            sum += add;
            if add.abs() < 1e-18 * (1.0 + sum.abs()) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        // E1(x) = exp(-x) * CF, CF = 1/(x+1- 1/(x+3- 4/(x+5- ...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x).exp() * h
    }
}

/// Non-regularized lower incomplete gamma γ(a, x) for a > 0.
pub fn lower_inc_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma::gamma_lr(a, x) * gamma::gamma(a)
}

/// Complete gamma function Γ(a).
pub fn gamma_fn(a: f64) -> f64 {
    gamma::gamma(a)
}

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_known_values() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_cdf(1.959963984540054), 0.975, epsilon = 5e-11);
        assert_abs_diff_eq!(norm_cdf(-1.0), 0.158655253931457, epsilon = 5e-11);
    }

    #[test]
    fn normal_quantile_round_trip() {
        for &p in &[1e-9, 1e-4, 0.025, 0.5, 0.6, 0.975, 1.0 - 1e-7] {
            let x = norm_quantile(p);
            assert_abs_diff_eq!(norm_cdf(x), p, epsilon = 1e-12 * (1.0 + p));
        }
    }

    #[test]
    fn e1_reference_values() {
        // Abramowitz & Stegun tables.
        assert_abs_diff_eq!(exp_int_e1(0.5), 0.559773594776160, epsilon = 1e-12);
        assert_abs_diff_eq!(exp_int_e1(1.0), 0.219383934395520, epsilon = 1e-12);
        assert_abs_diff_eq!(exp_int_e1(2.0), 0.048900510708061, epsilon = 1e-12);
        assert_abs_diff_eq!(exp_int_e1(10.0), 4.156968929685325e-6, epsilon = 1e-16);
    }

    #[test]
    fn lower_gamma_matches_complete() {
        assert_abs_diff_eq!(lower_inc_gamma(1.3, 1e8), gamma_fn(1.3), epsilon = 1e-10);
        // γ(1, x) = 1 - exp(-x)
        assert_abs_diff_eq!(lower_inc_gamma(1.0, 0.7), 1.0 - (-0.7f64).exp(), epsilon = 1e-12);
    }
}
