//! Grid and sampling checks of the semigroup properties, used by the
//! `coupling-check` / `mw-check` commands and the acceptance suite.

use super::QuantileCoupling;
use crate::distributions::WeightLaw;
use crate::report::{Check, CheckReport};
use crate::rng::RngStream;

/// Semigroup tolerance, scaled by 1 + |s|.
pub const SEMIGROUP_TOL: f64 = 1e-8;
/// Gaussian specialization tolerance, |g_τ(s) − (s + τ)|.
pub const GAUSSIAN_SHIFT_TOL: f64 = 1e-9;
/// Slack in the good-set lower bound g_τ(s) ≥ s + δτ.
pub const GOOD_SET_SLACK: f64 = 1e-10;

/// `points` evenly spaced values on [lo, hi].
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Sorted support points G⁻¹(u) for u evenly spaced in [1e-6, 1 − 1e-6].
pub fn support_grid(law: &WeightLaw, points: usize) -> Vec<f64> {
    linspace(1e-6, 1.0 - 1e-6, points)
        .into_iter()
        .map(|u| law.quantile(u).expect("u in (0,1)"))
        .collect()
}

/// max |g_{τ₁}(g_{τ₂}(s)) − g_{τ₁+τ₂}(s)| / (1 + |s|) over the grid.
pub fn semigroup_check(c: &QuantileCoupling, s_grid: &[f64], tau_grid: &[f64]) -> Check {
    let mut worst = 0.0_f64;
    for &s in s_grid {
        for &t1 in tau_grid {
            for &t2 in tau_grid {
                let composed = c.g_tau(s, t2).and_then(|v| c.g_tau(v, t1));
                let direct = c.g_tau(s, t1 + t2);
                let err = match (composed, direct) {
                    (Ok(a), Ok(b)) => (a - b).abs() / (1.0 + s.abs()),
                    _ => f64::INFINITY,
                };
                worst = worst.max(err);
            }
        }
    }
    Check::at_most("semigroup", worst, SEMIGROUP_TOL)
}

/// max |g_τ(g_{−τ}(s)) − s| / (1 + |s|).
pub fn inverse_pair_check(c: &QuantileCoupling, s_grid: &[f64], tau_grid: &[f64]) -> Check {
    let mut worst = 0.0_f64;
    for &s in s_grid {
        for &t in tau_grid {
            let err = match c.g_tau(s, -t).and_then(|v| c.g_tau(v, t)) {
                Ok(v) => (v - s).abs() / (1.0 + s.abs()),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    Check::at_most("inverse_pair", worst, SEMIGROUP_TOL)
}

/// Counts strict-monotonicity violations of g_τ(s) in s (τ fixed) and in τ
/// (s fixed) on sorted grids.
pub fn monotonicity_check(c: &QuantileCoupling, s_grid: &[f64], tau_grid: &[f64]) -> Check {
    let mut violations = 0usize;
    for &t in tau_grid {
        let row: Vec<f64> = s_grid.iter().map(|&s| c.g_tau(s, t).unwrap_or(f64::NAN)).collect();
        violations += row.windows(2).filter(|w| !(w[1] > w[0])).count();
    }
    for &s in s_grid {
        let col: Vec<f64> = tau_grid.iter().map(|&t| c.g_tau(s, t).unwrap_or(f64::NAN)).collect();
        violations += col.windows(2).filter(|w| !(w[1] > w[0])).count();
    }
    Check::at_most("strict_monotonicity", violations as f64, 0.0)
}

/// max |g_τ(s) − (s + τ)| for the standard normal law.
pub fn gaussian_shift_check(c: &QuantileCoupling, s_grid: &[f64], tau_grid: &[f64]) -> Check {
    let mut worst = 0.0_f64;
    for &s in s_grid {
        for &t in tau_grid {
            let err = match c.g_tau(s, t) {
                Ok(v) => (v - (s + t)).abs(),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    Check::at_most("gaussian_shift", worst, GAUSSIAN_SHIFT_TOL)
}

/// Draws s ~ G until `members` values in B_δ are collected and counts
/// violations of g_τ(s) ≥ s + δτ − 1e-10 on a 64-point τ-grid in [0, 1].
pub fn good_set_check(
    c: &QuantileCoupling,
    delta: f64,
    members: usize,
    stream: &mut RngStream,
) -> Check {
    let taus = linspace(0.0, 1.0, 64);
    let mut collected = 0usize;
    let mut violations = 0usize;
    let mut draws = 0usize;
    while collected < members && draws < 100 * members.max(1) {
        draws += 1;
        let s = c.h(stream.next_gaussian());
        if !c.b_delta_member(s, delta) {
            continue;
        }
        collected += 1;
        for &t in &taus {
            match c.g_tau(s, t) {
                Ok(v) if v >= s + delta * t - GOOD_SET_SLACK => {}
                _ => violations += 1,
            }
        }
    }
    let mut check = Check::at_most("good_set_lower_bound", violations as f64, 0.0);
    if collected < members {
        check.pass = false;
    }
    check
}

/// The full coupling battery for one law.
pub fn coupling_battery(c: &QuantileCoupling, stream: &mut RngStream) -> CheckReport {
    let law = c.law();
    let tau_grid = linspace(-1.0, 1.0, 16);
    let mut checks = Vec::new();
    if matches!(law, WeightLaw::Gaussian) {
        checks.push(gaussian_shift_check(c, &linspace(-4.0, 4.0, 64), &linspace(-1.0, 1.0, 64)));
    }
    let s_grid = support_grid(law, 32);
    checks.push(semigroup_check(c, &s_grid, &tau_grid));
    checks.push(inverse_pair_check(c, &s_grid, &tau_grid));
    checks.push(monotonicity_check(c, &support_grid(law, 64), &linspace(-1.0, 1.0, 64)));
    match c.estimate_delta0(0.999) {
        Ok(cal) => {
            checks.push(Check::flag(
                "delta0_mass",
                cal.achieved_mass >= cal.target_mass,
                cal.achieved_mass,
                cal.target_mass,
            ));
            checks.push(Check::flag("delta0", true, cal.delta0, 0.0));
            checks.push(good_set_check(c, cal.delta0, 10_000, stream));
        }
        Err(_) => checks.push(Check::flag("delta0_mass", false, 0.0, 0.999)),
    }
    for tau in [0.0, 0.3, -0.5] {
        if let Ok(ks) = c.pushforward_check(tau, 20_000, stream) {
            checks.push(Check::flag(
                format!("pushforward_tau_{tau}"),
                ks.pass,
                ks.statistic,
                ks.critical,
            ));
        }
    }
    // Informational: how often latents hit the clamp during the battery.
    checks.push(Check::flag(
        "latent_saturations",
        true,
        c.saturation_count() as f64,
        0.0,
    ));
    CheckReport {
        law: law.label(),
        checks,
    }
}
