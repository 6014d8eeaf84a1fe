//! Environments, the multi-scale perturbation schedule and passage times.
//!
//! An environment never materialises its weights. Each edge owns a standard
//! Gaussian latent drawn from a counter-based ChaCha stream addressed by the
//! edge's global coordinates, and its weight is `h(latent + τ(e))`. The same
//! seed therefore yields the same latent for an edge whatever box, radius or
//! access order is used, and every perturbed environment shares its latents
//! with the unperturbed one.

mod increments;
mod solver;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::coupling::{CouplingError, QuantileCoupling};
use crate::distributions::gaussian::std_normal_quantile;
use crate::distributions::{DistributionError, WeightLaw};
use crate::lattice::{
    annulus_size, edge_scale, scales, AnnulusIndex, EdgeId, GridBox, LatticeError,
};
use crate::rng::{open01, BlockSource, BLOCK_WORDS};

pub use increments::{increment_costs, low_increment_path, IncrementStudy, IncrementSummary};
pub use solver::{passage_time, passage_time_profile, PassageResult, PassageSolver};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FppError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Law(#[from] DistributionError),
    #[error("law {0} is not supported on (0, ∞); FPP needs positive weights")]
    NonPositiveSupport(String),
    #[error("restriction radius {radius} exceeds the environment box radius {box_radius}")]
    RadiusTooLarge { radius: u32, box_radius: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Double-double accumulator: `hi + lo` carries about 32 significant digits,
/// so long path sums do not drift. Ordering is lexicographic on (hi, lo),
/// which is numeric order for normalised pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn add(self, w: f64) -> Dd {
        // two-sum, then fast renormalisation
        let s = self.hi + w;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (w - bb);
        let lo = self.lo + err;
        let hi = s + lo;
        Dd {
            hi,
            lo: lo - (hi - s),
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Sum of weights in path order with compensated accumulation.
pub fn accumulate<I: IntoIterator<Item = f64>>(weights: I) -> Dd {
    weights.into_iter().fold(Dd::ZERO, Dd::add)
}

const OFFSET: i64 = 1 << 30;

/// Latents are stored in chunks of 16 consecutive y values × 2 axes at
/// fixed x; one ChaCha block of 32 words covers one chunk.
#[inline]
fn chunk_of(e: EdgeId) -> (u64, usize) {
    let ux = (e.x() as i64 + OFFSET) as u64;
    let uy = (e.y() as i64 + OFFSET) as u64;
    ((ux << 27) | (uy >> 4), ((uy & 15) * 2) as usize + e.axis() as usize)
}

/// The edges whose latents share a chunk with `e`, with their block slots.
fn chunk_members(e: EdgeId) -> impl Iterator<Item = (EdgeId, usize)> {
    let uy = (e.y() as i64 + OFFSET) & !15;
    let x = e.x();
    (0..16i64).flat_map(move |dy| {
        let y = (uy + dy - OFFSET) as i32;
        (0..2u8).map(move |axis| (EdgeId::new(x, y, axis), (dy * 2) as usize + axis as usize))
    })
}

#[inline]
fn latent_from_word(word: u64) -> f64 {
    std_normal_quantile(open01(word))
}

/// Sequential reader of seeded latents that keeps the last block.
#[derive(Debug, Clone)]
pub(crate) struct LatentCursor {
    source: BlockSource,
    chunk: Option<u64>,
    words: [u64; BLOCK_WORDS],
}

impl LatentCursor {
    fn new(source: BlockSource) -> Self {
        Self {
            source,
            chunk: None,
            words: [0; BLOCK_WORDS],
        }
    }

    #[inline]
    fn block_for(&mut self, e: EdgeId) -> (&[u64; BLOCK_WORDS], usize) {
        let (chunk, slot) = chunk_of(e);
        if self.chunk != Some(chunk) {
            self.source.fill_block(chunk, &mut self.words);
            self.chunk = Some(chunk);
        }
        (&self.words, slot)
    }

    #[inline]
    fn latent(&mut self, e: EdgeId) -> f64 {
        let (words, slot) = self.block_for(e);
        latent_from_word(words[slot])
    }
}

#[derive(Debug, Clone)]
enum Field {
    Seeded { seed: u64, source: BlockSource },
    Explicit { latents: Arc<Vec<f64>>, weights: Arc<Vec<f64>> },
}

/// The multi-scale schedule τ_r(e) = r / (2^k √ln n) on Λ_k, k0 ≤ k ≤ k1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationSchedule {
    pub n: u64,
    pub r: f64,
    pub scales: AnnulusIndex,
}

/// Builds τ_r for distance scale n. `r` may be any finite value; the
/// analysis uses r ∈ [−2, 2] but grid steps r + r0 can leave that range.
pub fn tau_schedule(n: u64, r: f64) -> Result<PerturbationSchedule, FppError> {
    if !r.is_finite() {
        return Err(FppError::InvalidArgument(format!("r must be finite, got {r}")));
    }
    Ok(PerturbationSchedule {
        n,
        r,
        scales: scales(n)?,
    })
}

impl PerturbationSchedule {
    /// τ on every edge of Λ_k.
    #[inline]
    pub fn tau_at_scale(&self, k: u32) -> f64 {
        if self.scales.contains(k) {
            self.r / ((1u64 << k) as f64 * (self.n as f64).ln().sqrt())
        } else {
            0.0
        }
    }

    #[inline]
    pub fn tau(&self, e: EdgeId) -> f64 {
        match edge_scale(e) {
            Some(k) => self.tau_at_scale(k),
            None => 0.0,
        }
    }

    /// ‖τ_r‖₂² = Σ_k |Λ_k| τ_k², summed in closed form.
    pub fn norm_sq(&self) -> f64 {
        (self.scales.k0..=self.scales.k1)
            .map(|k| annulus_size(k) as f64 * self.tau_at_scale(k).powi(2))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.r == 0.0
    }
}

/// One realisation of the edge weights on a box.
#[derive(Debug, Clone)]
pub struct Environment {
    coupling: Arc<QuantileCoupling>,
    grid: GridBox,
    field: Field,
    schedule: Option<PerturbationSchedule>,
}

impl Environment {
    /// IID weights with law G on `grid`; rejects laws that can put mass on
    /// (−∞, 0].
    pub fn sample(law: WeightLaw, grid: GridBox, seed: u64) -> Result<Self, FppError> {
        let coupling = Arc::new(QuantileCoupling::new(law)?);
        Self::with_coupling(coupling, grid, seed)
    }

    /// As `sample`, sharing an existing coupling (and its saturation counter).
    pub fn with_coupling(
        coupling: Arc<QuantileCoupling>,
        grid: GridBox,
        seed: u64,
    ) -> Result<Self, FppError> {
        if !coupling.law().has_positive_support() {
            return Err(FppError::NonPositiveSupport(coupling.law().label()));
        }
        Ok(Self::seeded(coupling, grid, seed))
    }

    /// Any law, including the standard normal; for exercising the coupling
    /// only. Passage times refuse such environments.
    pub fn coupling_test(coupling: Arc<QuantileCoupling>, grid: GridBox, seed: u64) -> Self {
        Self::seeded(coupling, grid, seed)
    }

    fn seeded(coupling: Arc<QuantileCoupling>, grid: GridBox, seed: u64) -> Self {
        Self {
            coupling,
            grid,
            field: Field::Seeded {
                seed,
                source: BlockSource::new(seed),
            },
            schedule: None,
        }
    }

    /// An environment with prescribed weights, indexed by `grid.edge_slot`
    /// (slots of edges leaving the box are ignored). Latents are recovered
    /// as h⁻¹(weight).
    pub fn from_weights(
        coupling: Arc<QuantileCoupling>,
        grid: GridBox,
        weights: Vec<f64>,
    ) -> Result<Self, FppError> {
        if weights.len() != grid.edge_slots() {
            return Err(FppError::InvalidArgument(format!(
                "expected {} weight slots, got {}",
                grid.edge_slots(),
                weights.len()
            )));
        }
        let mut latents = vec![0.0; weights.len()];
        for e in grid.edges() {
            let slot = grid.edge_slot(e);
            latents[slot] = coupling.h_inverse(weights[slot])?;
        }
        Ok(Self {
            coupling,
            grid,
            field: Field::Explicit {
                latents: Arc::new(latents),
                weights: Arc::new(weights),
            },
            schedule: None,
        })
    }

    pub fn grid(&self) -> GridBox {
        self.grid
    }

    pub fn coupling(&self) -> &Arc<QuantileCoupling> {
        &self.coupling
    }

    pub fn law(&self) -> &WeightLaw {
        self.coupling.law()
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.field {
            Field::Seeded { seed, .. } => Some(*seed),
            Field::Explicit { .. } => None,
        }
    }

    pub fn schedule(&self) -> Option<&PerturbationSchedule> {
        self.schedule.as_ref()
    }

    /// The modified environment t_{e,r} = g_{τ_r(e)}(t_e) = h(latent_e + τ_r(e)).
    /// Perturbing twice at the same scale n adds the two r values.
    pub fn perturb(&self, sched: &PerturbationSchedule) -> Result<Self, FppError> {
        let combined = match &self.schedule {
            None => *sched,
            Some(prev) if prev.n == sched.n => tau_schedule(sched.n, prev.r + sched.r)?,
            Some(prev) => {
                return Err(FppError::InvalidArgument(format!(
                    "cannot compose schedules for n = {} and n = {}",
                    prev.n, sched.n
                )))
            }
        };
        let mut out = self.clone();
        out.schedule = Some(combined);
        Ok(out)
    }

    /// The same latents with no perturbation.
    pub fn unperturbed(&self) -> Self {
        let mut out = self.clone();
        out.schedule = None;
        out
    }

    fn check_edge(&self, e: EdgeId) -> Result<(), FppError> {
        if self.grid.contains_edge(e) {
            Ok(())
        } else {
            let (a, _) = e.endpoints();
            Err(LatticeError::OutsideBox {
                x: a.0,
                y: a.1,
                radius: self.grid.radius,
            }
            .into())
        }
    }

    pub fn latent(&self, e: EdgeId) -> Result<f64, FppError> {
        self.check_edge(e)?;
        Ok(self.latent_unchecked(e))
    }

    pub(crate) fn latent_unchecked(&self, e: EdgeId) -> f64 {
        match &self.field {
            Field::Seeded { source, .. } => LatentCursor::new(source.clone()).latent(e),
            Field::Explicit { latents, .. } => latents[self.grid.edge_slot(e)],
        }
    }

    #[inline]
    pub fn tau(&self, e: EdgeId) -> f64 {
        self.schedule.as_ref().map_or(0.0, |s| s.tau(e))
    }

    /// Weight of `e` from its latent and perturbation.
    #[inline]
    pub(crate) fn weight_from_latent(&self, e: EdgeId, latent: f64) -> f64 {
        let tau = self.tau(e);
        if tau == 0.0 {
            if let Field::Explicit { weights, .. } = &self.field {
                return weights[self.grid.edge_slot(e)];
            }
            return self.coupling.h(latent);
        }
        self.coupling.h(latent + tau)
    }

    pub fn weight(&self, e: EdgeId) -> Result<f64, FppError> {
        self.check_edge(e)?;
        Ok(self.weight_from_latent(e, self.latent_unchecked(e)))
    }

    /// All edge weights of the box in edge-id order.
    pub fn weights(&self) -> Vec<(EdgeId, f64)> {
        let mut cursor = self.cursor();
        self.grid
            .edges()
            .map(|e| {
                let latent = match &mut cursor {
                    Some(c) => c.latent(e),
                    None => self.latent_unchecked(e),
                };
                (e, self.weight_from_latent(e, latent))
            })
            .collect()
    }

    pub(crate) fn cursor(&self) -> Option<LatentCursor> {
        match &self.field {
            Field::Seeded { source, .. } => Some(LatentCursor::new(source.clone())),
            Field::Explicit { .. } => None,
        }
    }

    /// Identity of the latent field, for caches: equal keys mean equal latents.
    pub(crate) fn field_key(&self) -> Option<u64> {
        match &self.field {
            Field::Seeded { seed, .. } => Some(*seed),
            Field::Explicit { .. } => None,
        }
    }

    /// T_r(p): the weight of an edge sequence, accumulated in order.
    pub fn path_weight(&self, path: &[EdgeId]) -> Result<f64, FppError> {
        let mut total = Dd::ZERO;
        for &e in path {
            total = total.add(self.weight(e)?);
        }
        Ok(total.value())
    }
}

/// Fills every latent of `e`'s chunk that lies in `grid` through `visit`.
pub(crate) fn for_chunk_latents(
    cursor: &mut LatentCursor,
    e: EdgeId,
    grid: &GridBox,
    mut visit: impl FnMut(EdgeId, f64),
) {
    let (words, _) = cursor.block_for(e);
    let words = *words;
    for (member, slot) in chunk_members(e) {
        if grid.contains((member.x(), member.y())) {
            visit(member, latent_from_word(words[slot]));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_env(radius: u32, seed: u64) -> Environment {
        Environment::sample(
            WeightLaw::exponential(1.0).unwrap(),
            GridBox::new(radius).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn dd_accumulation_beats_naive_sum() {
        let parts = [1.0, 1e-16, 1e-16, 1e-16, 1e-16, -1.0];
        assert_eq!(parts.iter().sum::<f64>(), 0.0);
        assert!((accumulate(parts).value() - 4e-16).abs() < 1e-30);
        assert!(Dd::ZERO.add(1.0) < Dd::ZERO.add(1.0).add(1e-20));
    }

    #[test]
    fn chunk_members_cover_their_block() {
        let e = EdgeId::new(-3, 37, 1);
        let (chunk, slot) = chunk_of(e);
        let members: Vec<_> = chunk_members(e).collect();
        assert_eq!(members.len(), BLOCK_WORDS);
        assert!(members.iter().any(|&(m, s)| m == e && s == slot));
        for (m, s) in members {
            assert_eq!(chunk_of(m), (chunk, s));
        }
    }

    #[test]
    fn same_seed_same_weights_and_radius_independence() {
        let a = exp_env(6, 9);
        let b = exp_env(6, 9);
        assert_eq!(a.weights(), b.weights());
        let big = exp_env(20, 9);
        for (e, w) in a.weights() {
            assert_eq!(big.weight(e).unwrap().to_bits(), w.to_bits());
        }
        let c = exp_env(6, 10);
        assert!(a.weights().iter().zip(c.weights()).any(|(x, y)| x.1 != y.1));
    }

    #[test]
    fn weights_are_positive_and_finite() {
        for (_, w) in exp_env(16, 3).weights() {
            assert!(w.is_finite() && w > 0.0);
        }
    }

    #[test]
    fn rejects_gaussian_law() {
        let r = Environment::sample(WeightLaw::gaussian(), GridBox::new(3).unwrap(), 1);
        assert!(matches!(r, Err(FppError::NonPositiveSupport(_))));
    }

    #[test]
    fn schedule_examples() {
        let s = tau_schedule(256, 1.0).unwrap();
        let in_l4 = EdgeId::between((17, 0), (18, 0)).unwrap();
        let in_l3 = EdgeId::between((9, 0), (10, 0)).unwrap();
        // mpmath: 1/(16*sqrt(log(256)))
        let want = 0.026_541_306_259_000_595;
        assert!((s.tau(in_l4) - want).abs() < 1e-17);
        assert_eq!(s.tau(in_l3), 0.0);
        let zero = tau_schedule(256, 0.0).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.tau(in_l4), 0.0);
        assert!(tau_schedule(8, 1.0).is_err());
        assert!(tau_schedule(64, f64::NAN).is_err());
    }

    #[test]
    fn schedule_is_linear_in_r() {
        let e = EdgeId::between((40, 3), (40, 4)).unwrap();
        let one = tau_schedule(128, 1.0).unwrap().tau(e);
        for r in [-2.0, -0.5, 0.25, 1.5] {
            let t = tau_schedule(128, r).unwrap().tau(e);
            assert!((t - r * one).abs() <= 1e-16);
        }
    }

    #[test]
    fn norm_sq_matches_edgewise_sum() {
        for n in [16u64, 40, 64] {
            let s = tau_schedule(n, 0.8).unwrap();
            let grid = GridBox::new(n as u32 + 1).unwrap();
            let direct: f64 = grid.edges().map(|e| s.tau(e).powi(2)).sum();
            assert!((direct - s.norm_sq()).abs() < 1e-12 * direct, "n={n}");
        }
    }

    #[test]
    fn zero_schedule_leaves_weights_bitwise() {
        let env = exp_env(8, 4);
        let same = env.perturb(&tau_schedule(16, 0.0).unwrap()).unwrap();
        assert_eq!(env.weights(), same.weights());
    }

    #[test]
    fn positive_r_raises_weights_and_untouched_edges_stay() {
        let env = exp_env(20, 4);
        let sched = tau_schedule(16, 0.7).unwrap();
        let up = env.perturb(&sched).unwrap();
        for ((e, w0), (_, w1)) in env.weights().into_iter().zip(up.weights()) {
            if sched.tau(e) == 0.0 {
                assert_eq!(w0.to_bits(), w1.to_bits());
            } else {
                assert!(w1 > w0);
            }
        }
    }

    #[test]
    fn perturbations_compose() {
        let env = exp_env(10, 2);
        let a = tau_schedule(16, 0.3).unwrap();
        let b = tau_schedule(16, -0.8).unwrap();
        let twice = env.perturb(&a).unwrap().perturb(&b).unwrap();
        assert_eq!(twice.schedule().unwrap().r, 0.3 + -0.8);
        assert!(env.perturb(&a).unwrap().perturb(&tau_schedule(32, 0.1).unwrap()).is_err());
    }

    #[test]
    fn gaussian_mode_adds_tau_exactly_along_a_path() {
        let c = Arc::new(QuantileCoupling::new(WeightLaw::gaussian()).unwrap());
        let env = Environment::coupling_test(c, GridBox::new(40).unwrap(), 7);
        let sched = tau_schedule(32, 0.9).unwrap();
        let up = env.perturb(&sched).unwrap();
        let path: Vec<EdgeId> = (0..32).map(|x| EdgeId::new(x, 0, 0)).collect();
        let shift: f64 = path.iter().map(|&e| sched.tau(e)).sum();
        let diff = up.path_weight(&path).unwrap() - env.path_weight(&path).unwrap();
        assert!((diff - shift).abs() < 1e-12, "{diff} vs {shift}");
        for &e in &path {
            let w0 = env.weight(e).unwrap();
            let w1 = up.weight(e).unwrap();
            assert!((w1 - (w0 + sched.tau(e))).abs() < 1e-14);
        }
    }

    #[test]
    fn explicit_weights_round_trip() {
        let c = Arc::new(QuantileCoupling::new(WeightLaw::exponential(1.0).unwrap()).unwrap());
        let grid = GridBox::new(1).unwrap();
        let mut weights = vec![0.0; grid.edge_slots()];
        for (i, e) in grid.edges().enumerate() {
            weights[grid.edge_slot(e)] = 0.5 + i as f64;
        }
        let env = Environment::from_weights(c, grid, weights.clone()).unwrap();
        for e in grid.edges() {
            assert_eq!(env.weight(e).unwrap(), weights[grid.edge_slot(e)]);
        }
        assert!(env.weight(EdgeId::new(1, 0, 0)).is_err());
    }
}
