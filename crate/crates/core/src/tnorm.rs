//! Moment-matched truncated normal distributions.
//!
//! A target mean `m` and variance `s2` inside physical bounds `(L, U)` are
//! turned into a normal `N(m, sigma0^2)` truncated to the symmetric interval
//! `[m - h, m + h]`, where `h` is the widest half-width that stays inside the
//! bounds. On a symmetric interval the truncated mean is `m` for every
//! `sigma0` and the truncated variance increases strictly with `sigma0`
//! (from 0 towards `h^2 / 3`), so `sigma0` is found by bisection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{norm_cdf, norm_central_mass, norm_pdf, norm_ppf, norm_sf};

/// Fraction of the uniform-limit variance `h^2/3` above which targets are
/// clamped.
pub const NEAR_LIMIT_FRACTION: f64 = 0.98;
const BISECT_LO: f64 = 1e-6;
const BISECT_HI: f64 = 50.0;
const BISECT_ITERS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum TruncError {
    #[error("mean {m} lies outside the open bounds ({lower}, {upper})")]
    MeanOutOfBounds { m: f64, lower: f64, upper: f64 },
    #[error("invalid bounds: lower {lower} must be below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("degenerate interval: width/sigma0 = {0:e}")]
    Degenerate(f64),
    #[error("negative target variance {0}")]
    NegativeVariance(f64),
}

/// Physical bounds of an outcome. `upper = None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: Option<f64>,
}

impl Bounds {
    pub fn new(lower: f64, upper: Option<f64>) -> Result<Self, TruncError> {
        let b = Bounds { lower, upper };
        if let Some(u) = upper {
            if !(lower < u) {
                return Err(TruncError::InvalidBounds { lower, upper: u });
            }
        }
        Ok(b)
    }

    pub fn lower_only(lower: f64) -> Self {
        Bounds { lower, upper: None }
    }

    pub fn upper_or_inf(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }

    /// True when `m` lies strictly inside the bounds.
    pub fn contains_open(&self, m: f64) -> bool {
        m > self.lower && m < self.upper_or_inf()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lower).min(self.upper_or_inf())
    }
}

/// A sampling specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruncSpec {
    /// Every draw returns `value`.
    Point { value: f64 },
    /// `N(mu0, sigma0^2)` truncated to `[lo, hi]`.
    Normal { mu0: f64, sigma0: f64, lo: f64, hi: f64 },
}

/// Result of [`match_moments`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matched {
    pub spec: TruncSpec,
    /// The target variance was at or above the near-uniform limit and was
    /// reduced to `NEAR_LIMIT_FRACTION * h^2 / 3`.
    pub clamped: bool,
}

/// Largest half-width `h` such that `[m - h, m + h]` stays within the bounds.
pub fn feasible_halfwidth(m: f64, bounds: &Bounds) -> Result<f64, TruncError> {
    if !bounds.contains_open(m) {
        return Err(TruncError::MeanOutOfBounds {
            m,
            lower: bounds.lower,
            upper: bounds.upper_or_inf(),
        });
    }
    Ok((m - bounds.lower).min(bounds.upper_or_inf() - m))
}

/// Variance of `N(0, sigma0^2)` truncated to `[-h, h]`.
pub fn symmetric_variance(h: f64, sigma0: f64) -> f64 {
    let z = h / sigma0;
    let mass = norm_central_mass(z);
    sigma0 * sigma0 * (1.0 - 2.0 * z * norm_pdf(z) / mass)
}

/// Post-truncation mean and variance.
pub fn trunc_moments(spec: &TruncSpec) -> Result<(f64, f64), TruncError> {
    let (mu0, sigma0, lo, hi) = match *spec {
        TruncSpec::Point { value } => return Ok((value, 0.0)),
        TruncSpec::Normal { mu0, sigma0, lo, hi } => (mu0, sigma0, lo, hi),
    };
    let width = (hi - lo) / sigma0;
    if !(width >= 1e-10) {
        return Err(TruncError::Degenerate(width));
    }
    if (mu0 - lo) == (hi - mu0) {
        return Ok((mu0, symmetric_variance(hi - mu0, sigma0)));
    }
    let alpha = (lo - mu0) / sigma0;
    let beta = (hi - mu0) / sigma0;
    // take the difference on the side with more precision
    let z = if alpha > 0.0 {
        norm_sf(alpha) - norm_sf(beta)
    } else {
        norm_cdf(beta) - norm_cdf(alpha)
    };
    let (pa, pb) = (norm_pdf(alpha), norm_pdf(beta));
    let apa = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let bpb = if beta.is_finite() { beta * pb } else { 0.0 };
    let r = (pa - pb) / z;
    let mean = mu0 + sigma0 * r;
    let var = sigma0 * sigma0 * (1.0 + (apa - bpb) / z - r * r);
    Ok((mean, var.max(0.0)))
}

/// Solve for the truncated normal whose post-truncation moments are `(m, s2)`.
pub fn match_moments(m: f64, s2: f64, bounds: &Bounds) -> Result<Matched, TruncError> {
    if s2 < 0.0 || s2.is_nan() {
        return Err(TruncError::NegativeVariance(s2));
    }
    let h = feasible_halfwidth(m, bounds)?;
    if s2 == 0.0 {
        return Ok(Matched {
            spec: TruncSpec::Point { value: m },
            clamped: false,
        });
    }
    let limit = NEAR_LIMIT_FRACTION * h * h / 3.0;
    let (target, clamped) = if s2 >= limit { (limit, true) } else { (s2, false) };
    if clamped {
        log::debug!("variance {s2} clamped to {target} (m = {m}, h = {h})");
    }

    let mut lo = BISECT_LO * h;
    let mut hi = BISECT_HI * h;
    let sigma0 = if target <= symmetric_variance(h, lo) {
        // truncation is immaterial at this scale
        target.sqrt()
    } else {
        let mut mid = (lo * hi).sqrt();
        for _ in 0..BISECT_ITERS {
            mid = (lo * hi).sqrt();
            let v = symmetric_variance(h, mid);
            if ((v - target) / target).abs() <= 1e-12 {
                break;
            }
            if v < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mid
    };
    Ok(Matched {
        spec: TruncSpec::Normal {
            mu0: m,
            sigma0,
            lo: m - h,
            hi: m + h,
        },
        clamped,
    })
}

/// Inverse-CDF draw from the spec. Always within `[lo, hi]`.
pub fn sample<R: Rng + ?Sized>(spec: &TruncSpec, rng: &mut R) -> f64 {
    match *spec {
        TruncSpec::Point { value } => value,
        TruncSpec::Normal { mu0, sigma0, lo, hi } => {
            let alpha = (lo - mu0) / sigma0;
            let beta = (hi - mu0) / sigma0;
            let u: f64 = rng.random();
            let x = if alpha > 0.0 {
                // upper tail: sample the survival function for precision
                let (sa, sb) = (norm_sf(alpha), norm_sf(beta));
                mu0 - sigma0 * norm_ppf(sa + u * (sb - sa))
            } else {
                let (ca, cb) = (norm_cdf(alpha), norm_cdf(beta));
                mu0 + sigma0 * norm_ppf(ca + u * (cb - ca))
            };
            x.clamp(lo, hi)
        }
    }
}
