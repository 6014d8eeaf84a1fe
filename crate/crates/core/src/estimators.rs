//! Statistics over passage-time samples: the concentration function, variance,
//! fluctuation probabilities, exact binomial tails and the Ω diagnostic.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::QuantileCoupling;
use crate::distributions::WeightLaw;
use crate::fpp::{tau_schedule, Environment, FppError, PassageSolver};
use crate::lattice::GridBox;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("sample set is empty")]
    Empty,
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("sample {index} is {value}; passage times must be finite and ≥ 0")]
    BadSample { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("profile decreases between points {index} and {}", index + 1)]
    NonMonotoneProfile { index: usize },
    #[error(transparent)]
    Fpp(#[from] FppError),
}

/// Passage-time samples with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub n: u64,
    pub law: String,
    pub master_seed: u64,
}

impl SampleSet {
    pub fn new(values: Vec<f64>, n: u64, law: String, master_seed: u64) -> Result<Self, EstimatorError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(EstimatorError::BadSample { index, value });
        }
        Ok(Self {
            values,
            n,
            law,
            master_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// max_a #{samples in [a, a+w]} / N with the maximising window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    pub w: f64,
    pub samples: usize,
    pub count: usize,
    pub q_hat: f64,
    pub a_star: f64,
    pub stderr: f64,
}

/// Exact maximal count over closed windows of width `w`. An optimal window
/// can always be slid right until its left end hits a sample, so a
/// two-pointer sweep over sample-anchored windows suffices. Ties go to the
/// smallest a.
pub fn concentration_function(values: &[f64], w: f64) -> Result<ConcentrationEstimate, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(EstimatorError::InvalidArgument(format!("window width {w} must be positive")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (0usize, sorted[0]);
    let mut j = 0usize;
    for i in 0..sorted.len() {
        if j < i {
            j = i;
        }
        while j + 1 < sorted.len() && sorted[j + 1] <= sorted[i] + w {
            j += 1;
        }
        let count = j - i + 1;
        if count > best.0 {
            best = (count, sorted[i]);
        }
    }
    let n = sorted.len() as f64;
    let q = best.0 as f64 / n;
    Ok(ConcentrationEstimate {
        w,
        samples: sorted.len(),
        count: best.0,
        q_hat: q,
        a_star: best.1,
        stderr: (q * (1.0 - q) / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub mean: f64,
    pub var: f64,
    /// Jackknife standard error of `var`; NaN below three samples.
    pub stderr: f64,
}

/// Unbiased sample variance with a jackknife standard error. Leave-one-out
/// variances come from the update S₋ᵢ = S − N(xᵢ − m)²/(N − 1).
pub fn variance_estimate(values: &[f64]) -> Result<VarianceEstimate, EstimatorError> {
    let len = values.len();
    if len < 2 {
        return Err(EstimatorError::TooFew { need: 2, got: len });
    }
    let n = len as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    let var = ss / (n - 1.0);
    let stderr = if len < 3 {
        f64::NAN
    } else {
        let loo: Vec<f64> = values
            .iter()
            .map(|x| ((ss - n * (x - mean).powi(2) / (n - 1.0)) / (n - 2.0)).max(0.0))
            .collect();
        let loo_mean = loo.iter().sum::<f64>() / n;
        ((n - 1.0) / n * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt()
    };
    Ok(VarianceEstimate { mean, var, stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub p: f64,
    pub stderr: f64,
}

/// P̂(T ∉ [a, b]).
pub fn fluctuation_probability(values: &[f64], a: f64, b: f64) -> Result<ProbabilityEstimate, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if !(a < b) {
        return Err(EstimatorError::InvalidArgument(format!("need a < b, got [{a}, {b}]")));
    }
    let n = values.len() as f64;
    let outside = values.iter().filter(|&&t| t < a || t > b).count();
    let p = outside as f64 / n;
    Ok(ProbabilityEstimate {
        p,
        stderr: (p * (1.0 - p) / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTail {
    pub ln_prob: f64,
    pub prob: f64,
}

/// P(Bin(m, p) ≤ threshold), summed term by term in log space.
pub fn binomial_tail_exact(m: u64, p: f64, threshold: u64) -> Result<BinomialTail, EstimatorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EstimatorError::InvalidArgument(format!("p = {p} is not a probability")));
    }
    if threshold > m {
        return Err(EstimatorError::InvalidArgument(format!(
            "threshold {threshold} exceeds m = {m}"
        )));
    }
    if threshold == m {
        return Ok(BinomialTail { ln_prob: 0.0, prob: 1.0 });
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mf = m as f64;
    let ln_fact_m = libm::lgamma(mf + 1.0);
    // x·ln y with the convention 0·ln 0 = 0
    let xlny = |x: f64, ly: f64| if x == 0.0 { 0.0 } else { x * ly };
    let terms: Vec<f64> = (0..=threshold)
        .map(|j| {
            let jf = j as f64;
            ln_fact_m - libm::lgamma(jf + 1.0) - libm::lgamma(mf - jf + 1.0)
                + xlny(jf, ln_p)
                + xlny(mf - jf, ln_q)
        })
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(BinomialTail {
            ln_prob: f64::NEG_INFINITY,
            prob: 0.0,
        });
    }
    let ln_prob = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    Ok(BinomialTail {
        ln_prob,
        prob: ln_prob.exp(),
    })
}

/// Lebesgue measure of {r : T_r ∈ [a, a+w]} for the piecewise-linear
/// interpolation of a nondecreasing profile of (r, T_r) points.
pub fn lebesgue_window_measure(profile: &[(f64, f64)], a: f64, w: f64) -> Result<f64, EstimatorError> {
    check_profile(profile)?;
    let hi = a + w;
    let mut total = 0.0;
    for seg in profile.windows(2) {
        let ((r0, t0), (r1, t1)) = (seg[0], seg[1]);
        if t1 == t0 {
            if t0 >= a && t0 <= hi {
                total += r1 - r0;
            }
            continue;
        }
        let lo_t = t0.max(a);
        let hi_t = t1.min(hi);
        if hi_t > lo_t {
            let slope = (t1 - t0) / (r1 - r0);
            total += (hi_t - lo_t) / slope;
        }
    }
    Ok(total)
}

/// max_a of `lebesgue_window_measure`; the maximum sits where a window end
/// meets a profile value.
pub fn max_window_measure(profile: &[(f64, f64)], w: f64) -> Result<(f64, f64), EstimatorError> {
    check_profile(profile)?;
    let mut best = (0.0, profile.first().map_or(0.0, |p| p.1));
    for &(_, t) in profile {
        for a in [t, t - w] {
            let m = lebesgue_window_measure(profile, a, w)?;
            if m > best.0 {
                best = (m, a);
            }
        }
    }
    Ok(best)
}

fn check_profile(profile: &[(f64, f64)]) -> Result<(), EstimatorError> {
    for (index, seg) in profile.windows(2).enumerate() {
        if !(seg[1].0 > seg[0].0) {
            return Err(EstimatorError::InvalidArgument(format!(
                "profile r values must increase (index {index})"
            )));
        }
        if seg[1].1 < seg[0].1 {
            return Err(EstimatorError::NonMonotoneProfile { index });
        }
    }
    Ok(())
}

/// r0 = 8 / (δ₀ √ln n).
pub fn omega_step(n: u64, delta0: f64) -> f64 {
    8.0 / (delta0 * (n as f64).ln().sqrt())
}

/// r0·ℤ ∩ [−1, 1] in increasing order.
pub fn omega_grid(r0: f64) -> Vec<f64> {
    let m = (1.0 / r0).floor() as i64;
    (-m..=m)
        .map(|j| j as f64 * r0)
        .filter(|r| r.abs() <= 1.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaConfig {
    pub law: WeightLaw,
    pub n: u64,
    pub trials: usize,
    pub delta0: f64,
    pub radius: u32,
    pub master_seed: u64,
    /// Points of the dense [−1, 1] profile used for the Lebesgue measure.
    pub profile_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaDiagnostic {
    pub n: u64,
    pub delta0: f64,
    pub r0: f64,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// Trials with T_{r+r0} − T_r < 2 for some r in the grid.
    pub failures: usize,
    pub failure_rate: f64,
    pub stderr: f64,
    pub min_increment: f64,
    /// `hits_histogram[c]`: trials whose best unit window holds c grid values.
    pub hits_histogram: Vec<usize>,
    /// Trials on which at most one grid value shared a unit window.
    pub single_hit_trials: usize,
    pub mean_window_measure: f64,
    pub max_window_measure: f64,
    /// Trials with the increment condition but window measure above 2·r0.
    pub measure_violations: usize,
}

/// Per-trial increments on the r0-grid plus the window measure of a dense
/// profile over [−1, 1], all on one latent field.
pub fn omega_diagnostic(cfg: &OmegaConfig) -> Result<OmegaDiagnostic, EstimatorError> {
    if cfg.trials < 100 {
        return Err(EstimatorError::TooFew { need: 100, got: cfg.trials });
    }
    if !(cfg.delta0 > 0.0) || cfg.profile_points < 2 {
        return Err(EstimatorError::InvalidArgument(
            "δ₀ must be positive and the profile needs two points".into(),
        ));
    }
    tau_schedule(cfg.n, 0.0)?;
    let coupling = Arc::new(QuantileCoupling::new(cfg.law.clone()).map_err(FppError::from)?);
    let grid_box = GridBox::new(cfg.radius).map_err(FppError::from)?;
    let r0 = omega_step(cfg.n, cfg.delta0);
    let grid = omega_grid(r0);
    let dense: Vec<f64> = (0..cfg.profile_points)
        .map(|i| -1.0 + 2.0 * i as f64 / (cfg.profile_points - 1) as f64)
        .collect();
    let target = (cfg.n as i32, 0);

    struct Trial {
        min_increment: f64,
        hits: usize,
        measure: f64,
    }

    let trials: Vec<Trial> = (0..cfg.trials)
        .into_par_iter()
        .map_init(
            || PassageSolver::new(cfg.radius),
            |solver, trial| -> Result<Trial, EstimatorError> {
                let solver = solver.as_mut().map_err(|e| e.clone())?;
                let seed = RngStream::derive_seed(cfg.master_seed, &[cfg.n, trial as u64]);
                let env = Environment::with_coupling(coupling.clone(), grid_box, seed)?;
                let mut min_increment = f64::INFINITY;
                let mut on_grid = Vec::with_capacity(grid.len());
                for &r in &grid {
                    let t = solver.profile(&env, cfg.n, &[r, r + r0], (0, 0), target)?;
                    min_increment = min_increment.min(t[1].time - t[0].time);
                    on_grid.push(t[0].time);
                }
                let hits = concentration_function(&on_grid, 1.0)?.count;
                let profile: Vec<(f64, f64)> = solver
                    .profile(&env, cfg.n, &dense, (0, 0), target)?
                    .iter()
                    .map(|p| (p.r, p.time))
                    .collect();
                let (measure, _) = max_window_measure(&profile, 1.0)?;
                Ok(Trial {
                    min_increment,
                    hits,
                    measure,
                })
            },
        )
        .collect::<Result<_, _>>()?;

    let failures = trials.iter().filter(|t| t.min_increment < 2.0).count();
    let n = cfg.trials as f64;
    let rate = failures as f64 / n;
    let mut histogram = vec![0usize; grid.len() + 1];
    for t in &trials {
        histogram[t.hits] += 1;
    }
    Ok(OmegaDiagnostic {
        n: cfg.n,
        delta0: cfg.delta0,
        r0,
        grid,
        trials: cfg.trials,
        failures,
        failure_rate: rate,
        stderr: (rate * (1.0 - rate) / n).sqrt(),
        min_increment: trials.iter().map(|t| t.min_increment).fold(f64::INFINITY, f64::min),
        single_hit_trials: trials.iter().filter(|t| t.hits <= 1).count(),
        hits_histogram: histogram,
        mean_window_measure: trials.iter().map(|t| t.measure).sum::<f64>() / n,
        max_window_measure: trials.iter().map(|t| t.measure).fold(0.0, f64::max),
        measure_violations: trials
            .iter()
            .filter(|t| t.min_increment >= 2.0 && t.measure > 2.0 * r0)
            .count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::EdgeId;

    fn brute_force(values: &[f64], w: f64) -> usize {
        values
            .iter()
            .map(|&a| values.iter().filter(|&&x| x >= a && x <= a + w).count())
            .max()
            .unwrap()
    }

    #[test]
    fn concentration_examples() {
        let est = concentration_function(&[0.2, 0.9, 1.5, 3.0], 1.0).unwrap();
        assert_eq!(est.q_hat, 0.5);
        assert_eq!(est.a_star, 0.2);
        assert_eq!(concentration_function(&[2.5; 7], 1e-9).unwrap().q_hat, 1.0);
        let distinct = [0.1, 0.4, 0.9, 1.7];
        assert_eq!(concentration_function(&distinct, 1e-6).unwrap().q_hat, 0.25);
        assert!(concentration_function(&[], 1.0).is_err());
        assert!(concentration_function(&[1.0], 0.0).is_err());
    }

    #[test]
    fn concentration_matches_brute_force_and_invariances() {
        let mut rng = RngStream::new(31);
        for round in 0..200 {
            let len = 2 + rng.next_below(499) as usize;
            // dyadic values so that translation by 3 is exact
            let mut v: Vec<f64> = (0..len).map(|_| rng.next_below(4096) as f64 / 512.0).collect();
            let w = [0.25, 1.0, 2.5][round % 3];
            let est = concentration_function(&v, w).unwrap();
            assert_eq!(est.count, brute_force(&v, w));
            let inside = v.iter().filter(|&&x| x >= est.a_star && x <= est.a_star + w).count();
            assert_eq!(inside, est.count);
            assert!(est.q_hat >= 1.0 / len as f64 && est.q_hat <= 1.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + 3.0).collect();
            assert_eq!(concentration_function(&shifted, w).unwrap().count, est.count);
            v.reverse();
            assert_eq!(concentration_function(&v, w).unwrap().count, est.count);
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_estimate(&[3.0; 40]).unwrap().var, 0.0);
        let two = variance_estimate(&[0.0, 2.0]).unwrap();
        assert_eq!(two.var, 2.0);
        assert!(two.stderr.is_nan());
        let law = WeightLaw::exponential(1.0).unwrap();
        let draws = law.sample(&mut RngStream::new(2), 100_000);
        let est = variance_estimate(&draws).unwrap();
        assert!((est.var - 1.0).abs() < 0.05, "{est:?}");
        assert!(est.stderr > 0.0 && est.stderr < 0.05);
    }

    #[test]
    fn jackknife_matches_direct_leave_one_out() {
        let v = [1.0, 4.0, 2.5, 7.0, 3.25, 0.5];
        let est = variance_estimate(&v).unwrap();
        let n = v.len() as f64;
        let loo: Vec<f64> = (0..v.len())
            .map(|i| {
                let rest: Vec<f64> = v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect();
                variance_estimate(&rest).unwrap().var
            })
            .collect();
        let m = loo.iter().sum::<f64>() / n;
        let want = ((n - 1.0) / n * loo.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt();
        assert!((est.stderr - want).abs() < 1e-12);
    }

    #[test]
    fn fluctuation_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(fluctuation_probability(&v, 0.0, 5.0).unwrap().p, 0.0);
        assert_eq!(fluctuation_probability(&v, -3.0, -1.0).unwrap().p, 1.0);
        let est = concentration_function(&v, 1.5).unwrap();
        let f = fluctuation_probability(&v, est.a_star, est.a_star + 1.5).unwrap();
        assert_eq!(f.p, 1.0 - est.q_hat);
        assert!(fluctuation_probability(&v, 1.0, 1.0).is_err());
    }

    #[test]
    fn binomial_examples() {
        let t = binomial_tail_exact(2, 0.999, 1).unwrap();
        assert!((t.prob - 0.001999).abs() < 1e-15);
        assert!(t.prob <= 8f64.powi(-2));
        assert_eq!(binomial_tail_exact(9, 0.3, 9).unwrap().prob, 1.0);
        assert_eq!(binomial_tail_exact(9, 1.0, 8).unwrap().prob, 0.0);
        // mpmath: sum of binomial(10, j) 0.3^j 0.7^(10-j), j ≤ 4
        assert!((binomial_tail_exact(10, 0.3, 4).unwrap().prob - 0.849_731_667_4).abs() < 1e-10);
        assert!(binomial_tail_exact(3, 1.2, 1).is_err());
        assert!(binomial_tail_exact(3, 0.5, 4).is_err());
    }

    #[test]
    fn binomial_matches_high_precision_reference() {
        // mpmath, 40 digits: ln P(Bin(2^k, 0.999) ≤ 2^{k−1})
        let reference = [
            (1u32, -6.215_108_223_463_874_040_6),
            (2, -12.025_084_811_081_924_341),
            (3, -23.385_726_994_287_638_757),
            (4, -45.806_501_927_632_077_507),
            (5, -90.324_910_764_299_653_031),
        ];
        for (k, want) in reference {
            let m = 1u64 << k;
            let got = binomial_tail_exact(m, 0.999, m / 2).unwrap().ln_prob;
            assert!(((got - want) / want).abs() < 1e-11, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn binomial_bound_holds_up_to_k20() {
        for k in 1..=20u32 {
            let m = 1u64 << k;
            let t = binomial_tail_exact(m, 0.999, m / 2).unwrap();
            assert!(t.ln_prob <= -(m as f64) * 8f64.ln(), "k={k}");
        }
    }

    #[test]
    fn window_measure_examples() {
        let flat = [(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)];
        assert_eq!(lebesgue_window_measure(&flat, 1.0, 1.0).unwrap(), 0.0);
        // T_r = a0 + 4r crosses [a, a+1] over a length 1/4
        let line: Vec<(f64, f64)> = (0..=8).map(|i| {
            let r = -1.0 + 0.25 * i as f64;
            (r, 10.0 + 4.0 * r)
        }).collect();
        let m = lebesgue_window_measure(&line, 9.5, 1.0).unwrap();
        assert!((m - 0.25).abs() < 1e-15);
        let (best, _) = max_window_measure(&line, 1.0).unwrap();
        assert!((best - 0.25).abs() < 1e-15);
        let broken = [(-1.0, 2.0), (0.0, 1.0)];
        assert_eq!(
            lebesgue_window_measure(&broken, 0.0, 1.0),
            Err(EstimatorError::NonMonotoneProfile { index: 0 })
        );
    }

    #[test]
    fn omega_grid_arithmetic() {
        // mpmath: 16/sqrt(log(256))
        let r0 = omega_step(256, 0.5);
        assert!((r0 - 6.794_574_402_304_152_341_8).abs() < 1e-14);
        for &r0 in &[0.3, 0.25, 0.07, 1.5, 6.79] {
            let g = omega_grid(r0);
            let expect = (2.0 / r0).floor() as usize + 1;
            assert!(g.len().abs_diff(expect) <= 1);
            assert!(g.iter().all(|r| r.abs() <= 1.0));
            for w in g.windows(2) {
                assert!((w[1] - w[0] - r0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gaussian_increments_are_schedule_sums() {
        let c = Arc::new(QuantileCoupling::new(WeightLaw::gaussian()).unwrap());
        let env = Environment::coupling_test(c, GridBox::new(70).unwrap(), 3);
        let (n, r, r0) = (64u64, -0.4, 0.3);
        let path: Vec<EdgeId> = (0..64).map(|x| EdgeId::new(x, 0, 0)).collect();
        let at = |r: f64| env.perturb(&tau_schedule(n, r).unwrap()).unwrap().path_weight(&path).unwrap();
        let lo = tau_schedule(n, r).unwrap();
        let hi = tau_schedule(n, r + r0).unwrap();
        let want: f64 = path.iter().map(|&e| hi.tau(e) - lo.tau(e)).sum();
        assert!((at(r + r0) - at(r) - want).abs() < 1e-12);
    }

    #[test]
    fn omega_small_run() {
        let cfg = OmegaConfig {
            law: WeightLaw::exponential(1.0).unwrap(),
            n: 16,
            trials: 100,
            delta0: 0.5,
            radius: 32,
            master_seed: 1,
            profile_points: 9,
        };
        let d = omega_diagnostic(&cfg).unwrap();
        assert_eq!(d.hits_histogram.iter().sum::<usize>(), 100);
        assert!(d.failure_rate >= 0.0 && d.failure_rate <= 1.0);
        assert!(d.max_window_measure <= 2.0);
    }
}
