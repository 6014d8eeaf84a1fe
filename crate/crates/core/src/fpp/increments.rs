//! Scale-k path increments T_{b}(p) − T_{a}(p) over P_k.
//!
//! For a fixed environment the event "some p ∈ P_k gains at most
//! δ₀ (b − a) / (2√ln n)" is decided exactly by a pruned depth-first search
//! over P_k: per-edge gains are non-negative when b ≥ a, so any partial path
//! already above the budget can be dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tau_schedule, Environment, FppError};
use crate::lattice::{annulus_edges, find_path_pk_within, scales, EdgeId, GridBox};
use crate::rng::RngStream;

/// Per-edge gains w_b(e) − w_a(e) on Λ_k, indexed by the slots of the box
/// of radius 2^{k+1}.
pub fn increment_costs(
    env: &Environment,
    n: u64,
    k: u32,
    r_from: f64,
    r_to: f64,
) -> Result<(GridBox, Vec<f64>), FppError> {
    let grid = GridBox::new(1 << (k + 1))?;
    if grid.radius > env.grid().radius {
        return Err(FppError::RadiusTooLarge {
            radius: grid.radius,
            box_radius: env.grid().radius,
        });
    }
    let tau_a = tau_schedule(n, r_from)?.tau_at_scale(k);
    let tau_b = tau_schedule(n, r_to)?.tau_at_scale(k);
    let coupling = env.coupling();
    let mut costs = vec![0.0; grid.edge_slots()];
    let mut cursor = env.cursor();
    for e in annulus_edges(k) {
        let z = match &mut cursor {
            Some(c) => c.latent(e),
            None => env.latent_unchecked(e),
        };
        costs[grid.edge_slot(e)] = coupling.h(z + tau_b) - coupling.h(z + tau_a);
    }
    Ok((grid, costs))
}

/// A path of P_k with T_{r_to}(p) − T_{r_from}(p) ≤ budget, if any.
pub fn low_increment_path(
    env: &Environment,
    n: u64,
    k: u32,
    r_from: f64,
    r_to: f64,
    budget: f64,
) -> Result<Option<Vec<EdgeId>>, FppError> {
    if r_to < r_from {
        return Err(FppError::InvalidArgument(format!(
            "need r_to ≥ r_from, got {r_from} → {r_to}"
        )));
    }
    let (grid, costs) = increment_costs(env, n, k, r_from, r_to)?;
    Ok(find_path_pk_within(k, |e| costs[grid.edge_slot(e)], budget))
}

/// Frequency study of low-increment paths at scales k ≤ 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementStudy {
    pub n: u64,
    pub ks: Vec<u32>,
    pub delta0: f64,
    /// Perturbation size r ∈ (0, 1].
    pub r: f64,
    /// Base point s of the shifted comparison T_{s+r} − T_s.
    pub s: f64,
    /// Constant C in the shifted budget C·e^{−2^{k−1}}.
    pub shifted_constant: f64,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSummary {
    pub k: u32,
    pub trials: usize,
    pub threshold: f64,
    pub hits: usize,
    pub frequency: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
    pub shifted_hits: usize,
    pub shifted_frequency: f64,
    pub shifted_stderr: f64,
    pub shifted_bound: f64,
    pub shifted_pass: bool,
}

fn binomial_stderr(p: f64, trials: usize) -> f64 {
    let n = trials as f64;
    let p = p.max(1.0 / n);
    (p * (1.0 - p) / n).sqrt()
}

impl IncrementStudy {
    pub fn run(&self, env_law: &crate::distributions::WeightLaw) -> Result<Vec<IncrementSummary>, FppError> {
        let idx = scales(self.n)?;
        for &k in &self.ks {
            if !idx.contains(k) || k > crate::lattice::MAX_ENUMERATION_SCALE {
                return Err(FppError::InvalidArgument(format!(
                    "k = {k} must lie in [{}, {}] and be at most {}",
                    idx.k0,
                    idx.k1,
                    crate::lattice::MAX_ENUMERATION_SCALE
                )));
            }
        }
        if !(self.r > 0.0 && self.r <= 1.0) || !(-1.0..=1.0).contains(&self.s) {
            return Err(FppError::InvalidArgument("need r ∈ (0, 1] and s ∈ [−1, 1]".into()));
        }
        let coupling =
            std::sync::Arc::new(crate::coupling::QuantileCoupling::new(env_law.clone())?);
        let radius = 1u32 << (idx.k1 + 1);
        let grid = GridBox::new(radius)?;
        let threshold = self.delta0 * self.r / (2.0 * (self.n as f64).ln().sqrt());

        let per_trial: Vec<Vec<(bool, bool)>> = (0..self.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = RngStream::derive_seed(self.master_seed, &[self.n, trial as u64]);
                let env = Environment::with_coupling(coupling.clone(), grid, seed)?;
                self.ks
                    .iter()
                    .map(|&k| {
                        let plain = low_increment_path(&env, self.n, k, 0.0, self.r, threshold)?;
                        let shifted = low_increment_path(
                            &env,
                            self.n,
                            k,
                            self.s,
                            self.s + self.r,
                            threshold,
                        )?;
                        Ok((plain.is_some(), shifted.is_some()))
                    })
                    .collect()
            })
            .collect::<Result<_, FppError>>()?;

        Ok(self
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let hits = per_trial.iter().filter(|t| t[i].0).count();
                let shifted_hits = per_trial.iter().filter(|t| t[i].1).count();
                let n = self.trials as f64;
                let frequency = hits as f64 / n;
                let shifted_frequency = shifted_hits as f64 / n;
                let stderr = binomial_stderr(frequency, self.trials);
                let shifted_stderr = binomial_stderr(shifted_frequency, self.trials);
                let bound = (-(2f64.powi(k as i32))).exp();
                let shifted_bound = self.shifted_constant * (-(2f64.powi(k as i32 - 1))).exp();
                IncrementSummary {
                    k,
                    trials: self.trials,
                    threshold,
                    hits,
                    frequency,
                    stderr,
                    bound,
                    pass: frequency <= bound + 3.0 * stderr,
                    shifted_hits,
                    shifted_frequency,
                    shifted_stderr,
                    shifted_bound,
                    shifted_pass: shifted_frequency <= shifted_bound + 3.0 * shifted_stderr,
                }
            })
            .collect())
    }
}
