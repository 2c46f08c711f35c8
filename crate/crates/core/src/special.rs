//! Normal, Student-t, and F distribution functions.
//!
//! The error function and the regularized incomplete beta come from `statrs`;
//! everything built on top of them lives here.

use statrs::function::{beta::beta_reg, erf};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    0.5 * erf::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function, accurate in the upper tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// P(-z < Z < z) for z >= 0, without cancellation for small z.
#[inline]
pub fn norm_central_mass(z: f64) -> f64 {
    if z.is_infinite() {
        return 1.0;
    }
    erf::erf(z * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF. Returns ±inf at 0 and 1.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // One Newton step on the CDF tightens the inverse-erfc approximation.
    let pdf = norm_pdf(x);
    if pdf > 1e-300 {
        let err = if x > 0.0 {
            (1.0 - p) - norm_sf(x)
        } else {
            norm_cdf(x) - p
        };
        let step = if x > 0.0 { -err / pdf } else { err / pdf };
        x -= step;
    }
    x
}

/// Two-sided p-value P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Student-t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t, by bisection on the CDF.
pub fn student_t_ppf(p: f64, df: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while student_t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Upper-tail probability of the F(d1, d2) distribution.
pub fn f_sf(w: f64, d1: f64, d2: f64) -> f64 {
    if w.is_nan() {
        return f64::NAN;
    }
    if w <= 0.0 {
        return 1.0;
    }
    if w.is_infinite() {
        return 0.0;
    }
    let x = d2 / (d2 + d1 * w);
    beta_reg(0.5 * d2, 0.5 * d1, x).clamp(0.0, 1.0)
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    beta_reg(a, b, x.clamp(0.0, 1.0))
}
