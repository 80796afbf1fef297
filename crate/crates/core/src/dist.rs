//! Prior and likelihood families.
//!
//! Gamma families use the shape–rate parameterization, so `gamma(5, 5)` has
//! mean 1. `exp_gamma(a, b)` is the law of `log X` for `X ~ gamma(a, b)`.
//! Truncated families return densities without their normalizing constant;
//! the bounds are constants, so posteriors are unaffected.

use std::f64::consts::{LN_2, PI};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Proposal cap for rejection sampling of truncated families.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorDef {
    Normal { mean: f64, sd: f64 },
    HalfNormal { loc: f64, scale: f64 },
    StudentT { df: f64, loc: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
    ExpGamma { shape: f64, rate: f64 },
    TruncatedNormal { mean: f64, sd: f64, lower: f64, upper: f64 },
    TruncatedGamma { shape: f64, rate: f64, lower: f64, upper: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Distribution(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Distribution(format!("{name} must be finite, got {v}")))
    }
}

fn bounds(lower: f64, upper: f64) -> Result<()> {
    if lower.is_nan() || upper.is_nan() || lower >= upper || lower == f64::INFINITY {
        Err(Error::Distribution(format!("truncation bounds [{lower}, {upper}] are not ordered")))
    } else {
        Ok(())
    }
}

impl PriorDef {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        finite("mean", mean)?;
        positive("sd", sd)?;
        Ok(Self::Normal { mean, sd })
    }

    pub fn half_normal(loc: f64, scale: f64) -> Result<Self> {
        finite("loc", loc)?;
        positive("scale", scale)?;
        Ok(Self::HalfNormal { loc, scale })
    }

    pub fn student_t(df: f64, loc: f64, scale: f64) -> Result<Self> {
        positive("df", df)?;
        finite("loc", loc)?;
        positive("scale", scale)?;
        Ok(Self::StudentT { df, loc, scale })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        Ok(Self::Gamma { shape, rate })
    }

    pub fn exp_gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        Ok(Self::ExpGamma { shape, rate })
    }

    pub fn truncated_normal(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        finite("mean", mean)?;
        positive("sd", sd)?;
        bounds(lower, upper)?;
        Ok(Self::TruncatedNormal { mean, sd, lower, upper })
    }

    pub fn truncated_gamma(shape: f64, rate: f64, lower: f64, upper: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        bounds(lower, upper)?;
        if upper <= 0.0 {
            return Err(Error::Distribution(format!("gamma truncation [{lower}, {upper}] excludes (0, inf)")));
        }
        Ok(Self::TruncatedGamma { shape, rate, lower, upper })
    }

    /// Re-runs the constructor checks; used after deserialization.
    pub fn validated(self) -> Result<Self> {
        match self {
            Self::Normal { mean, sd } => Self::normal(mean, sd),
            Self::HalfNormal { loc, scale } => Self::half_normal(loc, scale),
            Self::StudentT { df, loc, scale } => Self::student_t(df, loc, scale),
            Self::Gamma { shape, rate } => Self::gamma(shape, rate),
            Self::ExpGamma { shape, rate } => Self::exp_gamma(shape, rate),
            Self::TruncatedNormal { mean, sd, lower, upper } => Self::truncated_normal(mean, sd, lower, upper),
            Self::TruncatedGamma { shape, rate, lower, upper } => Self::truncated_gamma(shape, rate, lower, upper),
        }
    }

    /// Closed support `(lower, upper)`; infinite ends are unbounded.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Normal { .. } | Self::StudentT { .. } | Self::ExpGamma { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            Self::HalfNormal { loc, .. } => (loc, f64::INFINITY),
            Self::Gamma { .. } => (0.0, f64::INFINITY),
            Self::TruncatedNormal { lower, upper, .. } => (lower, upper),
            Self::TruncatedGamma { lower, upper, .. } => (lower.max(0.0), upper),
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        let (lo, hi) = self.support();
        match self {
            Self::Gamma { .. } => x > 0.0 && x < f64::INFINITY,
            Self::TruncatedGamma { .. } => x > 0.0 && x >= lo && x <= hi,
            _ => x >= lo && x <= hi && x.is_finite(),
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.log_pdf_grad(x).0
    }

    /// Log density and its derivative in `x`.
    pub fn log_pdf_grad(&self, x: f64) -> (f64, f64) {
        if !self.in_support(x) {
            return (f64::NEG_INFINITY, 0.0);
        }
        match *self {
            Self::Normal { mean, sd } | Self::TruncatedNormal { mean, sd, .. } => {
                let z = (x - mean) / sd;
                (-LN_SQRT_2PI - sd.ln() - 0.5 * z * z, -z / sd)
            }
            Self::HalfNormal { loc, scale } => {
                let z = (x - loc) / scale;
                (LN_2 - LN_SQRT_2PI - scale.ln() - 0.5 * z * z, -z / scale)
            }
            Self::StudentT { df, loc, scale } => {
                let z = (x - loc) / scale;
                let c = libm::lgamma(0.5 * (df + 1.0))
                    - libm::lgamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln();
                let q = 1.0 + z * z / df;
                (c - 0.5 * (df + 1.0) * q.ln(), -(df + 1.0) * z / (df * scale * q))
            }
            Self::Gamma { shape, rate } | Self::TruncatedGamma { shape, rate, .. } => (
                shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x,
                (shape - 1.0) / x - rate,
            ),
            Self::ExpGamma { shape, rate } => {
                let ex = x.exp();
                (
                    shape * rate.ln() - libm::lgamma(shape) + shape * x - rate * ex,
                    shape - rate * ex,
                )
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let std_normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let gamma = |shape: f64, rate: f64| {
            Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Distribution(e.to_string()))
        };
        match *self {
            Self::Normal { mean, sd } => Ok(mean + sd * std_normal(rng)),
            Self::HalfNormal { loc, scale } => Ok(loc + scale * std_normal(rng).abs()),
            Self::StudentT { df, loc, scale } => {
                let t = StudentT::new(df).map_err(|e| Error::Distribution(e.to_string()))?;
                Ok(loc + scale * t.sample(rng))
            }
            Self::Gamma { shape, rate } => Ok(gamma(shape, rate)?.sample(rng)),
            Self::ExpGamma { shape, rate } => Ok(gamma(shape, rate)?.sample(rng).ln()),
            Self::TruncatedNormal { mean, sd, lower, upper } => {
                for _ in 0..MAX_REJECTIONS {
                    let x = mean + sd * std_normal(rng);
                    if x >= lower && x <= upper {
                        return Ok(x);
                    }
                }
                Err(Error::RejectionLimit(MAX_REJECTIONS))
            }
            Self::TruncatedGamma { shape, rate, lower, upper } => {
                let g = gamma(shape, rate)?;
                for _ in 0..MAX_REJECTIONS {
                    let x = g.sample(rng);
                    if x >= lower && x <= upper {
                        return Ok(x);
                    }
                }
                Err(Error::RejectionLimit(MAX_REJECTIONS))
            }
        }
    }

    /// Same family with every scale parameter multiplied by `factor`.
    /// Gamma-type families keep their mean and scale their standard deviation.
    pub fn tightened(&self, factor: f64) -> Self {
        let k = 1.0 / (factor * factor);
        match *self {
            Self::Normal { mean, sd } => Self::Normal { mean, sd: sd * factor },
            Self::HalfNormal { loc, scale } => Self::HalfNormal { loc, scale: scale * factor },
            Self::StudentT { df, loc, scale } => Self::StudentT { df, loc, scale: scale * factor },
            Self::Gamma { shape, rate } => Self::Gamma { shape: shape * k, rate: rate * k },
            Self::ExpGamma { shape, rate } => Self::ExpGamma { shape: shape * k, rate: rate * k },
            Self::TruncatedNormal { mean, sd, lower, upper } => {
                Self::TruncatedNormal { mean, sd: sd * factor, lower, upper }
            }
            Self::TruncatedGamma { shape, rate, lower, upper } => {
                Self::TruncatedGamma { shape: shape * k, rate: rate * k, lower, upper }
            }
        }
    }
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        String::new()
    } else {
        format!("{v}")
    }
}

impl fmt::Display for PriorDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Normal { mean, sd } => write!(f, "normal({mean}, {sd})"),
            Self::HalfNormal { loc, scale } => write!(f, "half_normal({loc}, {scale})"),
            Self::StudentT { df, loc, scale } => write!(f, "student_t({df}, {loc}, {scale})"),
            Self::Gamma { shape, rate } => write!(f, "gamma({shape}, {rate})"),
            Self::ExpGamma { shape, rate } => write!(f, "exp_gamma({shape}, {rate})"),
            Self::TruncatedNormal { mean, sd, lower, upper } => {
                write!(f, "normal({mean}, {sd}) T[{}, {}]", fmt_bound(lower), fmt_bound(upper))
            }
            Self::TruncatedGamma { shape, rate, lower, upper } => {
                write!(f, "gamma({shape}, {rate}) T[{}, {}]", fmt_bound(lower), fmt_bound(upper))
            }
        }
    }
}

/// Standard normal log density.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * z * z
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Mills ratio `Q(x) / phi(x)` for `x >= 8` by continued fraction.
fn mills_ratio(x: f64) -> f64 {
    // Evaluated backwards: R = 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
    let mut t = 0.0;
    for k in (1..=60).rev() {
        t = k as f64 / (x + t);
    }
    1.0 / (x + t)
}

/// `log Phi(z)` without underflow in the lower tail.
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z < -8.0 {
        std_normal_log_pdf(z) + mills_ratio(-z).ln()
    } else if z > 5.0 {
        (-0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    } else {
        std_normal_cdf(z).ln()
    }
}

/// `log Phi(z)` and its derivative `phi(z) / Phi(z)`.
pub fn log_std_normal_cdf_grad(z: f64) -> (f64, f64) {
    if z < -8.0 {
        let r = mills_ratio(-z);
        (std_normal_log_pdf(z) + r.ln(), 1.0 / r)
    } else {
        let l = log_std_normal_cdf(z);
        (l, (std_normal_log_pdf(z) - l).exp())
    }
}

/// Log-likelihood of a possibly censored normal observation.
///
/// Values at or beyond a bound contribute the log tail mass beyond it.
pub fn censored_normal_loglik(y: f64, mean: f64, sd: f64, bounds: (f64, f64)) -> Result<f64> {
    if !(y.is_finite() && mean.is_finite() && sd.is_finite()) {
        return Err(Error::NonFinite(format!("y={y}, mean={mean}, sd={sd}")));
    }
    if sd <= 0.0 {
        return Err(Error::Distribution(format!("sd must be positive, got {sd}")));
    }
    let (lower, upper) = bounds;
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::Distribution(format!("censoring bounds [{lower}, {upper}] are not ordered")));
    }
    Ok(censored_normal_terms(y, mean, sd, lower, upper).0)
}

/// Censored normal log-likelihood with derivatives in `mean` and `sd`.
#[inline]
pub(crate) fn censored_normal_terms(y: f64, mean: f64, sd: f64, lower: f64, upper: f64) -> (f64, f64, f64) {
    if y <= lower {
        let z = (lower - mean) / sd;
        let (l, h) = log_std_normal_cdf_grad(z);
        (l, -h / sd, -h * z / sd)
    } else if y >= upper {
        let z = (mean - upper) / sd;
        let (l, h) = log_std_normal_cdf_grad(z);
        (l, h / sd, -h * z / sd)
    } else {
        normal_terms(y, mean, sd)
    }
}

/// Normal log density with derivatives in `mean` and `sd`.
#[inline]
pub(crate) fn normal_terms(y: f64, mean: f64, sd: f64) -> (f64, f64, f64) {
    let r = (y - mean) / sd;
    (-LN_SQRT_2PI - sd.ln() - 0.5 * r * r, r / sd, (r * r - 1.0) / sd)
}
