//! Monotone quantile coupling and the perturbation semigroup.
//!
//! For a weight law G the transport `h = G⁻¹ ∘ Φ` pushes a standard normal
//! latent onto G. Shifting the latent and transporting back gives
//!
//! ```text
//! g_τ(s) = h(h⁻¹(s) + τ)
//! ```
//!
//! which is increasing in both arguments, satisfies `g_0 = id` and
//! `g_σ ∘ g_τ = g_{σ+τ}`, and reduces to `s + τ` when G is itself standard
//! normal. The good sets `B_δ` are defined numerically as the points where
//! `g_τ(s) − s ≥ δτ` holds on a fixed geometric τ-grid in (0, 1].

pub mod checks;
mod mw;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::gaussian::{
    std_normal_cdf, std_normal_quantile, std_normal_quantile_upper,
};
use crate::distributions::{DistributionError, WeightLaw};

pub use mw::{gaussian_halfline_holds, mw_report, KsReport, MwReport};

/// Latents are clamped to this range; Φ loses relative precision beyond it.
pub const LATENT_LIMIT: f64 = 8.5;

/// Number of points in the membership τ-grid.
pub const GAIN_GRID_POINTS: usize = 64;

/// Smallest τ in the membership grid, 2⁻¹⁶.
pub const GAIN_GRID_MIN: f64 = 1.0 / 65_536.0;

/// Absolute slack (scaled by 1 + |s|) allowed in `g_τ(s) − s ≥ δτ` when
/// deciding membership; absorbs rounding in the h ∘ h⁻¹ round trip.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Number of latent grid cells used when integrating G(B_δ).
const MASS_GRID_CELLS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Law(#[from] DistributionError),
    #[error("value {value} lies outside the support ({lo}, {hi})")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },
    #[error("no δ on the grid reaches mass {target}; best was {best_mass} at δ = {best_delta}")]
    CalibrationFailed {
        target: f64,
        best_delta: f64,
        best_mass: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The geometric τ-grid 2^{-16}, …, 1 used by the B_δ membership predicate.
pub fn gain_grid() -> [f64; GAIN_GRID_POINTS] {
    let mut grid = [0.0; GAIN_GRID_POINTS];
    for (i, slot) in grid.iter_mut().enumerate() {
        let e = -16.0 + 16.0 * i as f64 / (GAIN_GRID_POINTS - 1) as f64;
        *slot = e.exp2();
    }
    grid[GAIN_GRID_POINTS - 1] = 1.0;
    grid
}

/// Candidate δ values for calibration, largest first: 2⁰, 2⁻¹, …, 2⁻²⁰.
pub fn delta_grid() -> Vec<f64> {
    (0..=20).map(|j| (-(j as f64)).exp2()).collect()
}

/// The transport h = G⁻¹ ∘ Φ for one weight law.
#[derive(Debug)]
pub struct QuantileCoupling {
    law: WeightLaw,
    saturations: AtomicU64,
}

impl Clone for QuantileCoupling {
    fn clone(&self) -> Self {
        Self {
            law: self.law.clone(),
            saturations: AtomicU64::new(self.saturation_count()),
        }
    }
}

/// Result of `estimate_delta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta0Calibration {
    pub delta0: f64,
    pub achieved_mass: f64,
    pub target_mass: f64,
    /// Numeric integration error bound; zero-variance for the quadrature route.
    pub stderr: f64,
    pub method: String,
}

impl QuantileCoupling {
    pub fn new(law: WeightLaw) -> Result<Self, CouplingError> {
        law.validate()?;
        Ok(Self {
            law,
            saturations: AtomicU64::new(0),
        })
    }

    pub fn law(&self) -> &WeightLaw {
        &self.law
    }

    /// The open support interval S_G.
    pub fn support(&self) -> (f64, f64) {
        self.law.support()
    }

    /// Number of latents that were clamped to ±`LATENT_LIMIT` so far.
    pub fn saturation_count(&self) -> u64 {
        self.saturations.load(Ordering::Relaxed)
    }

    #[inline]
    fn clamp_latent(&self, x: f64) -> f64 {
        if x.abs() > LATENT_LIMIT {
            self.saturations.fetch_add(1, Ordering::Relaxed);
            x.clamp(-LATENT_LIMIT, LATENT_LIMIT)
        } else {
            x
        }
    }

    /// h(x) = G⁻¹(Φ(x)). Latents beyond ±8.5 saturate and are counted.
    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        let x = self.clamp_latent(x);
        if x <= 0.0 {
            self.law.quantile_lower(std_normal_cdf(x))
        } else {
            self.law.quantile_upper(std_normal_cdf(-x))
        }
    }

    /// h⁻¹(s) = Φ⁻¹(G(s)) for s in the support.
    pub fn h_inverse(&self, s: f64) -> Result<f64, CouplingError> {
        if !self.law.in_support(s) {
            let (lo, hi) = self.support();
            return Err(CouplingError::OutsideSupport { value: s, lo, hi });
        }
        let p = self.law.cdf(s);
        let x = if p <= 0.5 {
            std_normal_quantile(p)
        } else {
            std_normal_quantile_upper(self.law.sf(s))
        };
        Ok(self.clamp_latent(x))
    }

    /// g_τ(s) = h(h⁻¹(s) + τ).
    pub fn g_tau(&self, s: f64, tau: f64) -> Result<f64, CouplingError> {
        let x = self.h_inverse(s)?;
        if tau == 0.0 {
            return Ok(s);
        }
        Ok(self.h(x + tau))
    }

    /// Gains g_τ(s) − s on the membership τ-grid, from the latent x = h⁻¹(s).
    fn gains_from_latent(&self, x: f64, s: f64) -> [f64; GAIN_GRID_POINTS] {
        let grid = gain_grid();
        let mut out = [0.0; GAIN_GRID_POINTS];
        for (slot, tau) in out.iter_mut().zip(grid) {
            *slot = self.h(x + tau) - s;
        }
        out
    }

    fn member_from_gains(gains: &[f64; GAIN_GRID_POINTS], s: f64, delta: f64) -> bool {
        let slack = MEMBERSHIP_SLACK * (1.0 + s.abs());
        gains
            .iter()
            .zip(gain_grid())
            .all(|(g, tau)| g - delta * tau >= -slack)
    }

    /// min over the τ-grid of (g_τ(s) − s)/τ; NaN outside the support.
    pub fn min_gain_ratio(&self, s: f64) -> f64 {
        let Ok(x) = self.h_inverse(s) else {
            return f64::NAN;
        };
        self.gains_from_latent(x, s)
            .iter()
            .zip(gain_grid())
            .map(|(g, tau)| g / tau)
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership of s in B_δ: g_τ(s) ≥ s + δτ on every τ of the grid.
    pub fn b_delta_member(&self, s: f64, delta: f64) -> bool {
        let Ok(x) = self.h_inverse(s) else {
            return false;
        };
        let gains = self.gains_from_latent(x, s);
        Self::member_from_gains(&gains, s, delta)
    }

    fn member_at_latent(&self, x: f64, delta: f64) -> bool {
        let s = self.h(x);
        let gains = self.gains_from_latent(x, s);
        Self::member_from_gains(&gains, s, delta)
    }

    /// G(B_δ), integrated in latent space: the membership region is located
    /// on a fine grid of [−8.5, 8.5], its boundaries refined by bisection,
    /// and the Gaussian mass of each interval summed exactly through Φ.
    pub fn good_set_mass(&self, delta: f64) -> f64 {
        let cells = MASS_GRID_CELLS;
        let xs: Vec<f64> = (0..=cells)
            .map(|i| -LATENT_LIMIT + 2.0 * LATENT_LIMIT * i as f64 / cells as f64)
            .collect();
        let members: Vec<bool> = xs.iter().map(|&x| self.member_at_latent(x, delta)).collect();
        self.mass_from_grid(&xs, &members, delta)
    }

    fn mass_from_grid(&self, xs: &[f64], members: &[bool], delta: f64) -> f64 {
        let refine = |mut a: f64, mut b: f64, a_in: bool| {
            for _ in 0..50 {
                let mid = 0.5 * (a + b);
                if self.member_at_latent(mid, delta) == a_in {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let mut mass = 0.0;
        let mut start: Option<f64> = if members[0] { Some(xs[0]) } else { None };
        for i in 1..xs.len() {
            match (members[i - 1], members[i]) {
                (false, true) => start = Some(refine(xs[i - 1], xs[i], false)),
                (true, false) => {
                    let end = refine(xs[i - 1], xs[i], true);
                    mass += interval_mass(start.take().expect("open interval"), end);
                }
                _ => {}
            }
        }
        if let Some(a) = start {
            mass += interval_mass(a, xs[xs.len() - 1]);
        }
        mass
    }

    /// Largest δ in {2⁰, …, 2⁻²⁰} with G(B_δ) ≥ `target_mass`.
    pub fn estimate_delta0(&self, target_mass: f64) -> Result<Delta0Calibration, CouplingError> {
        if !(target_mass > 0.0 && target_mass < 1.0) {
            return Err(CouplingError::InvalidArgument(format!(
                "target mass {target_mass} must lie in (0, 1)"
            )));
        }
        let cells = MASS_GRID_CELLS;
        let xs: Vec<f64> = (0..=cells)
            .map(|i| -LATENT_LIMIT + 2.0 * LATENT_LIMIT * i as f64 / cells as f64)
            .collect();
        // Gains do not depend on δ; compute them once.
        let gains: Vec<(f64, [f64; GAIN_GRID_POINTS])> = xs
            .iter()
            .map(|&x| {
                let s = self.h(x);
                (s, self.gains_from_latent(x, s))
            })
            .collect();

        let mut best = (f64::NAN, 0.0);
        for delta in delta_grid() {
            let members: Vec<bool> = gains
                .iter()
                .map(|(s, g)| Self::member_from_gains(g, *s, delta))
                .collect();
            let mass = self.mass_from_grid(&xs, &members, delta);
            if mass >= target_mass {
                return Ok(Delta0Calibration {
                    delta0: delta,
                    achieved_mass: mass,
                    target_mass,
                    stderr: 0.0,
                    method: "latent-interval quadrature".into(),
                });
            }
            if mass > best.1 {
                best = (delta, mass);
            }
        }
        Err(CouplingError::CalibrationFailed {
            target: target_mass,
            best_delta: best.0,
            best_mass: best.1,
        })
    }
}

/// Φ(b) − Φ(a), using the tail that avoids cancellation.
fn interval_mass(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_cdf(-b)
    }
}
