use serde::{Deserialize, Serialize};

use super::{CouplingError, QuantileCoupling};
use crate::distributions::gaussian::std_normal_cdf;
use crate::rng::RngStream;
use crate::stats::{ks_critical_value, ks_statistic};

/// Monte Carlo estimate of both sides of the product-measure inequality
/// P(X∈A) ≤ e^{‖τ‖²/2} √(P(g_τ(X)∈A) · P(g_{−τ}(X)∈A)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwReport {
    pub dim: usize,
    pub trials: usize,
    pub tau_norm_sq: f64,
    pub lhs: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub rhs: f64,
    /// rhs − lhs
    pub margin: f64,
    /// Combined standard error of lhs and rhs.
    pub stderr: f64,
    pub pass: bool,
    /// All three estimated probabilities were zero.
    pub inconclusive: bool,
}

/// Assembles an `MwReport` from raw event frequencies.
///
/// The rhs standard error is propagated with the delta method; probabilities
/// are floored at 1/N inside the error terms so a zero estimate still carries
/// sampling uncertainty.
pub fn mw_report(
    dim: usize,
    trials: usize,
    tau_norm_sq: f64,
    lhs: f64,
    p_plus: f64,
    p_minus: f64,
) -> MwReport {
    let n = trials as f64;
    let floor = 1.0 / n;
    let se = |p: f64| {
        let p = p.max(floor);
        (p * (1.0 - p).max(floor) / n).sqrt()
    };
    let factor = (0.5 * tau_norm_sq).exp();
    let rhs = factor * (p_plus * p_minus).sqrt();
    let (pp, pm) = (p_plus.max(floor), p_minus.max(floor));
    let se_rhs = 0.5 * factor * (se(p_plus) * (pm / pp).sqrt() + se(p_minus) * (pp / pm).sqrt());
    let stderr = (se(lhs).powi(2) + se_rhs.powi(2)).sqrt();
    let inconclusive = lhs == 0.0 && p_plus == 0.0 && p_minus == 0.0;
    MwReport {
        dim,
        trials,
        tau_norm_sq,
        lhs,
        p_plus,
        p_minus,
        rhs,
        margin: rhs - lhs,
        stderr,
        pass: lhs <= rhs + 3.0 * stderr,
        inconclusive,
    }
}

/// Closed-form one-dimensional Gaussian case with A = [a, ∞):
/// Φ(−a) ≤ e^{t²/2} √(Φ(t − a) Φ(−t − a)).
pub fn gaussian_halfline_holds(a: f64, t: f64) -> bool {
    let lhs = std_normal_cdf(-a);
    let rhs = (0.5 * t * t).exp() * (std_normal_cdf(t - a) * std_normal_cdf(-t - a)).sqrt();
    lhs <= rhs * (1.0 + 1e-12)
}

/// One-sample Kolmogorov–Smirnov comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub trials: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

impl QuantileCoupling {
    /// Estimates P(X∈A), P(g_τ(X)∈A) and P(g_{−τ}(X)∈A) from shared latent
    /// Gaussians: X = h(Z), g_{±τ}(X) = h(Z ± τ).
    pub fn mw_inequality_check<F>(
        &self,
        tau: &[f64],
        event: F,
        trials: usize,
        stream: &mut RngStream,
    ) -> Result<MwReport, CouplingError>
    where
        F: Fn(&[f64]) -> bool,
    {
        if tau.is_empty() {
            return Err(CouplingError::InvalidArgument("dimension must be ≥ 1".into()));
        }
        if trials < 1000 {
            return Err(CouplingError::InvalidArgument(format!(
                "need at least 1000 trials, got {trials}"
            )));
        }
        let dim = tau.len();
        let mut latent = vec![0.0; dim];
        let mut base = vec![0.0; dim];
        let mut plus = vec![0.0; dim];
        let mut minus = vec![0.0; dim];
        let (mut hits, mut hits_plus, mut hits_minus) = (0usize, 0usize, 0usize);
        for _ in 0..trials {
            for z in latent.iter_mut() {
                *z = stream.next_gaussian();
            }
            for i in 0..dim {
                base[i] = self.h(latent[i]);
                plus[i] = self.h(latent[i] + tau[i]);
                minus[i] = self.h(latent[i] - tau[i]);
            }
            hits += event(&base) as usize;
            hits_plus += event(&plus) as usize;
            hits_minus += event(&minus) as usize;
        }
        let n = trials as f64;
        let tau_norm_sq = tau.iter().map(|t| t * t).sum();
        Ok(mw_report(
            dim,
            trials,
            tau_norm_sq,
            hits as f64 / n,
            hits_plus as f64 / n,
            hits_minus as f64 / n,
        ))
    }

    /// Checks that g_τ(X), X ~ G, has CDF s ↦ Φ(h⁻¹(s) − τ).
    pub fn pushforward_check(
        &self,
        tau: f64,
        trials: usize,
        stream: &mut RngStream,
    ) -> Result<KsReport, CouplingError> {
        if trials < 10_000 {
            return Err(CouplingError::InvalidArgument(format!(
                "need at least 10000 trials, got {trials}"
            )));
        }
        let draws = self.law().sample(stream, trials);
        let shifted = draws
            .iter()
            .map(|&x| self.g_tau(x, tau))
            .collect::<Result<Vec<_>, _>>()?;
        let (lo, hi) = self.support();
        let target = |s: f64| {
            if s <= lo {
                0.0
            } else if s >= hi {
                1.0
            } else {
                std_normal_cdf(self.h_inverse(s).expect("inside support") - tau)
            }
        };
        let statistic = ks_statistic(&shifted, target);
        let critical = ks_critical_value(0.999, trials);
        Ok(KsReport {
            trials,
            statistic,
            critical,
            pass: statistic < critical,
        })
    }
}
