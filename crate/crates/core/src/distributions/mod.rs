//! Edge-weight laws and the standard Gaussian kernel.
//!
//! Every law is absolutely continuous and exposes its CDF, survival function,
//! density and quantile. Quantiles are available separately for the lower and
//! upper tail so that compositions with Φ keep relative accuracy far into
//! either tail. Sampling is inverse transform only.

pub mod gaussian;
mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaussian::GaussianKernel;
use gaussian::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_quantile_upper};

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid knot table: {0}")]
    InvalidKnots(String),
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
}

/// One breakpoint of a piecewise-linear CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub s: f64,
    pub cdf: f64,
}

/// An absolutely continuous weight distribution G.
///
/// All families except `Gaussian` live on (0, ∞). `Gaussian` is the standard
/// normal law, admitted only to validate the coupling against its closed
/// form; passage-time experiments reject it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightLaw {
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
    Gamma { shape: f64, scale: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { mu: f64, sigma: f64 },
    #[serde(rename = "piecewise_linear")]
    PiecewiseLinearCdf { knots: Vec<Knot> },
    Gaussian,
}

fn positive(name: &'static str, value: f64) -> Result<(), DistributionError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DistributionError::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

impl WeightLaw {
    pub fn exponential(rate: f64) -> Result<Self, DistributionError> {
        let law = WeightLaw::Exponential { rate };
        law.validate()?;
        Ok(law)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistributionError> {
        let law = WeightLaw::Uniform { lo, hi };
        law.validate()?;
        Ok(law)
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, DistributionError> {
        let law = WeightLaw::Gamma { shape, scale };
        law.validate()?;
        Ok(law)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self, DistributionError> {
        let law = WeightLaw::LogNormal { mu, sigma };
        law.validate()?;
        Ok(law)
    }

    pub fn piecewise_linear(knots: Vec<Knot>) -> Result<Self, DistributionError> {
        let law = WeightLaw::PiecewiseLinearCdf { knots };
        law.validate()?;
        Ok(law)
    }

    /// Standard normal law (coupling-test mode only).
    pub fn gaussian() -> Self {
        WeightLaw::Gaussian
    }

    /// Checks parameters. Constructors call this; deserialized laws must too.
    pub fn validate(&self) -> Result<(), DistributionError> {
        match self {
            WeightLaw::Exponential { rate } => positive("rate", *rate),
            WeightLaw::Uniform { lo, hi } => {
                positive("lo", *lo)?;
                if !(hi.is_finite() && hi > lo) {
                    return Err(DistributionError::InvalidParameter {
                        name: "hi",
                        value: *hi,
                        reason: "must be finite and greater than lo",
                    });
                }
                Ok(())
            }
            WeightLaw::Gamma { shape, scale } => {
                positive("shape", *shape)?;
                positive("scale", *scale)
            }
            WeightLaw::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(DistributionError::InvalidParameter {
                        name: "mu",
                        value: *mu,
                        reason: "must be finite",
                    });
                }
                positive("sigma", *sigma)
            }
            WeightLaw::PiecewiseLinearCdf { knots } => validate_knots(knots),
            WeightLaw::Gaussian => Ok(()),
        }
    }

    /// Short human-readable descriptor, e.g. `exponential(rate=1)`.
    pub fn label(&self) -> String {
        match self {
            WeightLaw::Exponential { rate } => format!("exponential(rate={rate})"),
            WeightLaw::Uniform { lo, hi } => format!("uniform(lo={lo},hi={hi})"),
            WeightLaw::Gamma { shape, scale } => format!("gamma(shape={shape},scale={scale})"),
            WeightLaw::LogNormal { mu, sigma } => format!("lognormal(mu={mu},sigma={sigma})"),
            WeightLaw::PiecewiseLinearCdf { knots } => {
                format!("piecewise_linear({} knots)", knots.len())
            }
            WeightLaw::Gaussian => "gaussian".to_string(),
        }
    }

    /// Open interval on which the density is positive.
    pub fn support(&self) -> (f64, f64) {
        match self {
            WeightLaw::Exponential { .. } | WeightLaw::Gamma { .. } | WeightLaw::LogNormal { .. } => {
                (0.0, f64::INFINITY)
            }
            WeightLaw::Uniform { lo, hi } => (*lo, *hi),
            WeightLaw::PiecewiseLinearCdf { knots } => {
                (knots[0].s, knots[knots.len() - 1].s)
            }
            WeightLaw::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// True when the support lies in [0, ∞), as passage times require.
    pub fn has_positive_support(&self) -> bool {
        self.support().0 >= 0.0
    }

    pub fn in_support(&self, s: f64) -> bool {
        let (lo, hi) = self.support();
        s > lo && s < hi
    }

    /// G((−∞, s])
    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => {
                if s <= 0.0 {
                    0.0
                } else {
                    -(-rate * s).exp_m1()
                }
            }
            WeightLaw::Uniform { lo, hi } => ((s - lo) / (hi - lo)).clamp(0.0, 1.0),
            WeightLaw::Gamma { shape, scale } => special::gamma_p(*shape, s / scale),
            WeightLaw::LogNormal { mu, sigma } => {
                if s <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((s.ln() - mu) / sigma)
                }
            }
            WeightLaw::PiecewiseLinearCdf { knots } => pwl_cdf(knots, s),
            WeightLaw::Gaussian => std_normal_cdf(s),
        }
    }

    /// 1 − G(s), computed directly in the upper tail.
    pub fn sf(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => {
                if s <= 0.0 {
                    1.0
                } else {
                    (-rate * s).exp()
                }
            }
            WeightLaw::Uniform { lo, hi } => ((hi - s) / (hi - lo)).clamp(0.0, 1.0),
            WeightLaw::Gamma { shape, scale } => special::gamma_q(*shape, s / scale),
            WeightLaw::LogNormal { mu, sigma } => {
                if s <= 0.0 {
                    1.0
                } else {
                    std_normal_cdf(-(s.ln() - mu) / sigma)
                }
            }
            WeightLaw::PiecewiseLinearCdf { knots } => pwl_sf(knots, s),
            WeightLaw::Gaussian => std_normal_cdf(-s),
        }
    }

    pub fn density(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => {
                if s < 0.0 {
                    0.0
                } else {
                    rate * (-rate * s).exp()
                }
            }
            WeightLaw::Uniform { lo, hi } => {
                if s >= *lo && s <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            WeightLaw::Gamma { shape, scale } => special::gamma_density(*shape, s / scale) / scale,
            WeightLaw::LogNormal { mu, sigma } => {
                if s <= 0.0 {
                    0.0
                } else {
                    std_normal_pdf((s.ln() - mu) / sigma) / (s * sigma)
                }
            }
            WeightLaw::PiecewiseLinearCdf { knots } => pwl_density(knots, s),
            WeightLaw::Gaussian => std_normal_pdf(s),
        }
    }

    /// G⁻¹(u) for u ∈ (0, 1).
    pub fn quantile(&self, u: f64) -> Result<f64, DistributionError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(DistributionError::ProbabilityOutOfRange(u));
        }
        Ok(if u <= 0.5 {
            self.quantile_lower(u)
        } else {
            self.quantile_upper(1.0 - u)
        })
    }

    /// G⁻¹(p), accurate for small p. Caller guarantees p ∈ (0, 1).
    pub fn quantile_lower(&self, p: f64) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => -(-p).ln_1p() / rate,
            WeightLaw::Uniform { lo, hi } => lo + p * (hi - lo),
            WeightLaw::Gamma { shape, scale } => scale * special::gamma_quantile(*shape, p, false),
            WeightLaw::LogNormal { mu, sigma } => (mu + sigma * std_normal_quantile(p)).exp(),
            WeightLaw::PiecewiseLinearCdf { knots } => pwl_quantile_lower(knots, p),
            WeightLaw::Gaussian => std_normal_quantile(p),
        }
    }

    /// G⁻¹(1 − q), accurate for small q. Caller guarantees q ∈ (0, 1).
    pub fn quantile_upper(&self, q: f64) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => -q.ln() / rate,
            WeightLaw::Uniform { lo, hi } => hi - q * (hi - lo),
            WeightLaw::Gamma { shape, scale } => scale * special::gamma_quantile(*shape, q, true),
            WeightLaw::LogNormal { mu, sigma } => {
                (mu + sigma * std_normal_quantile_upper(q)).exp()
            }
            WeightLaw::PiecewiseLinearCdf { knots } => pwl_quantile_upper(knots, q),
            WeightLaw::Gaussian => std_normal_quantile_upper(q),
        }
    }

    /// `count` IID draws by inverse transform of the stream's uniforms.
    pub fn sample(&self, stream: &mut RngStream, count: usize) -> Vec<f64> {
        (0..count)
            .map(|_| {
                let u = stream.next_open01();
                self.quantile(u).expect("open01 lies in (0, 1)")
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        match self {
            WeightLaw::Exponential { rate } => 1.0 / rate,
            WeightLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            WeightLaw::Gamma { shape, scale } => shape * scale,
            WeightLaw::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            WeightLaw::PiecewiseLinearCdf { knots } => knots
                .windows(2)
                .map(|w| (w[1].cdf - w[0].cdf) * 0.5 * (w[0].s + w[1].s))
                .sum(),
            WeightLaw::Gaussian => 0.0,
        }
    }
}

fn validate_knots(knots: &[Knot]) -> Result<(), DistributionError> {
    if knots.len() < 2 {
        return Err(DistributionError::InvalidKnots(
            "need at least two knots".into(),
        ));
    }
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if first.cdf != 0.0 || last.cdf != 1.0 {
        return Err(DistributionError::InvalidKnots(
            "cdf must start at 0 and end at 1".into(),
        ));
    }
    if !(first.s.is_finite() && first.s >= 0.0) {
        return Err(DistributionError::InvalidKnots(
            "first knot must be finite and non-negative".into(),
        ));
    }
    for (i, w) in knots.windows(2).enumerate() {
        if !(w[1].s.is_finite() && w[1].s > w[0].s) {
            return Err(DistributionError::InvalidKnots(format!(
                "knot positions must be strictly increasing (at index {})",
                i + 1
            )));
        }
        if !(w[1].cdf > w[0].cdf) {
            return Err(DistributionError::InvalidKnots(format!(
                "cdf values must be strictly increasing (at index {})",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Index i of the segment [s_i, s_{i+1}] containing s (clamped).
fn segment_of(knots: &[Knot], s: f64) -> usize {
    let idx = knots.partition_point(|k| k.s <= s);
    idx.saturating_sub(1).min(knots.len() - 2)
}

fn pwl_cdf(knots: &[Knot], s: f64) -> f64 {
    if s <= knots[0].s {
        return 0.0;
    }
    if s >= knots[knots.len() - 1].s {
        return 1.0;
    }
    let i = segment_of(knots, s);
    let (a, b) = (knots[i], knots[i + 1]);
    a.cdf + (b.cdf - a.cdf) * (s - a.s) / (b.s - a.s)
}

fn pwl_sf(knots: &[Knot], s: f64) -> f64 {
    if s <= knots[0].s {
        return 1.0;
    }
    if s >= knots[knots.len() - 1].s {
        return 0.0;
    }
    let i = segment_of(knots, s);
    let (a, b) = (knots[i], knots[i + 1]);
    (1.0 - b.cdf) + (b.cdf - a.cdf) * (b.s - s) / (b.s - a.s)
}

fn pwl_density(knots: &[Knot], s: f64) -> f64 {
    if s < knots[0].s || s > knots[knots.len() - 1].s {
        return 0.0;
    }
    let i = segment_of(knots, s);
    let (a, b) = (knots[i], knots[i + 1]);
    (b.cdf - a.cdf) / (b.s - a.s)
}

fn pwl_quantile_lower(knots: &[Knot], p: f64) -> f64 {
    let idx = knots.partition_point(|k| k.cdf <= p);
    let i = idx.saturating_sub(1).min(knots.len() - 2);
    let (a, b) = (knots[i], knots[i + 1]);
    a.s + (p - a.cdf) * (b.s - a.s) / (b.cdf - a.cdf)
}

fn pwl_quantile_upper(knots: &[Knot], q: f64) -> f64 {
    // Upper-tail masses 1 − F_i are decreasing in i.
    let idx = knots.partition_point(|k| 1.0 - k.cdf > q);
    let i = idx.clamp(1, knots.len() - 1) - 1;
    let (a, b) = (knots[i], knots[i + 1]);
    b.s - (q - (1.0 - b.cdf)) * (b.s - a.s) / (b.cdf - a.cdf)
}
