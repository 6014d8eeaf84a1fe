//! Dijkstra on [−R, R]² with reusable, generation-stamped buffers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::{for_chunk_latents, tau_schedule, Dd, Environment, FppError, LatentCursor};
use crate::lattice::{EdgeId, GridBox, Vertex};

/// Tentative distances closer than this are counted as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageResult {
    /// Perturbation parameter the result was computed at (0 when unperturbed).
    pub r: f64,
    pub time: f64,
    /// Geodesic edges from source to target.
    pub geodesic: Vec<EdgeId>,
    pub restriction_radius: u32,
    pub touched_boundary: bool,
    /// Relaxations whose tentative distance tied an existing one.
    pub ties: u64,
    pub settled: u64,
}

#[derive(Clone, Copy)]
struct Entry {
    dist: Dd,
    vertex: u32,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed for a min-heap; equal distances pop the smaller vertex first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .hi
            .total_cmp(&self.dist.hi)
            .then(other.dist.lo.total_cmp(&self.dist.lo))
            .then(other.vertex.cmp(&self.vertex))
    }
}

const NO_PRED: u8 = u8::MAX;
// Neighbour offsets in lexicographic order of the neighbour vertex.
const DIRS: [(i32, i32); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// Reusable shortest-path workspace for one box radius.
///
/// Latents of the current environment are cached across queries, so a
/// profile over many r values draws each latent once; weights are cached
/// per query.
pub struct PassageSolver {
    grid: GridBox,
    dist: Vec<Dd>,
    seen: Vec<u32>,
    settled: Vec<u32>,
    pred: Vec<u8>,
    query: u32,
    latent: Vec<f64>,
    latent_stamp: Vec<u32>,
    latent_gen: u32,
    latent_key: Option<u64>,
    weight: Vec<f64>,
    weight_stamp: Vec<u32>,
    heap: BinaryHeap<Entry>,
}

impl PassageSolver {
    pub fn new(radius: u32) -> Result<Self, FppError> {
        let grid = GridBox::new(radius)?;
        let nv = grid.vertex_count() as usize;
        let ne = grid.edge_slots();
        Ok(Self {
            grid,
            dist: vec![Dd::ZERO; nv],
            seen: vec![0; nv],
            settled: vec![0; nv],
            pred: vec![NO_PRED; nv],
            query: 0,
            latent: vec![0.0; ne],
            latent_stamp: vec![0; ne],
            latent_gen: 0,
            latent_key: None,
            weight: vec![0.0; ne],
            weight_stamp: vec![0; ne],
            heap: BinaryHeap::new(),
        })
    }

    pub fn radius(&self) -> u32 {
        self.grid.radius
    }

    /// Approximate bytes held by a solver for radius `radius`.
    pub fn footprint_bytes(radius: u32) -> u64 {
        let side = 2 * radius as u64 + 1;
        let nv = side * side;
        // per vertex: Dd + 2 stamps + pred; per slot (2 per vertex): latent,
        // weight and two stamps
        nv * (16 + 8 + 1) + 2 * nv * (8 + 8 + 8)
    }

    fn next_query(&mut self) -> u32 {
        if self.query == u32::MAX {
            self.seen.fill(0);
            self.settled.fill(0);
            self.weight_stamp.fill(0);
            self.query = 0;
        }
        self.query += 1;
        self.query
    }

    fn bind_latents(&mut self, env: &Environment) {
        let key = env.field_key();
        if key.is_none() || key != self.latent_key {
            if self.latent_gen == u32::MAX {
                self.latent_stamp.fill(0);
                self.latent_gen = 0;
            }
            self.latent_gen += 1;
            self.latent_key = key;
        }
    }

    #[inline]
    fn edge_weight(
        &mut self,
        env: &Environment,
        cursor: &mut Option<LatentCursor>,
        e: EdgeId,
        q: u32,
    ) -> f64 {
        let slot = self.grid.edge_slot(e);
        if self.weight_stamp[slot] == q {
            return self.weight[slot];
        }
        let latent = match cursor {
            Some(c) => {
                if self.latent_stamp[slot] != self.latent_gen {
                    let grid = self.grid;
                    let (latent, stamp, generation) =
                        (&mut self.latent, &mut self.latent_stamp, self.latent_gen);
                    for_chunk_latents(c, e, &grid, |m, z| {
                        let s = grid.edge_slot(m);
                        latent[s] = z;
                        stamp[s] = generation;
                    });
                }
                self.latent[slot]
            }
            None => env.latent_unchecked(e),
        };
        let w = env.weight_from_latent(e, latent);
        self.weight[slot] = w;
        self.weight_stamp[slot] = q;
        w
    }

    /// T^R(source, target) in `env` with R = this solver's radius.
    pub fn solve(
        &mut self,
        env: &Environment,
        source: Vertex,
        target: Vertex,
    ) -> Result<PassageResult, FppError> {
        if !env.law().has_positive_support() {
            return Err(FppError::NonPositiveSupport(env.law().label()));
        }
        let radius = self.grid.radius;
        if radius > env.grid().radius {
            return Err(FppError::RadiusTooLarge {
                radius,
                box_radius: env.grid().radius,
            });
        }
        self.grid.check(source)?;
        self.grid.check(target)?;
        self.bind_latents(env);
        let mut cursor = env.cursor();
        let q = self.next_query();
        let grid = self.grid;
        let src = grid.vertex_index(source) as u32;
        let dst = grid.vertex_index(target) as u32;

        self.heap.clear();
        self.dist[src as usize] = Dd::ZERO;
        self.seen[src as usize] = q;
        self.pred[src as usize] = NO_PRED;
        self.heap.push(Entry {
            dist: Dd::ZERO,
            vertex: src,
        });
        let mut ties = 0u64;
        let mut settled = 0u64;
        let mut reached = false;

        while let Some(Entry { dist, vertex }) = self.heap.pop() {
            let vi = vertex as usize;
            if self.settled[vi] == q || dist != self.dist[vi] {
                continue;
            }
            self.settled[vi] = q;
            settled += 1;
            if vertex == dst {
                reached = true;
                break;
            }
            let here = grid.vertex_at(vi);
            for (dir, (dx, dy)) in DIRS.iter().enumerate() {
                let next = (here.0 + dx, here.1 + dy);
                if !grid.contains(next) {
                    continue;
                }
                let ni = grid.vertex_index(next);
                if self.settled[ni] == q {
                    continue;
                }
                let e = EdgeId::between(here, next).expect("neighbours");
                let w = self.edge_weight(env, &mut cursor, e, q);
                let cand = dist.add(w);
                if self.seen[ni] != q {
                    self.seen[ni] = q;
                    self.dist[ni] = cand;
                    self.pred[ni] = dir as u8;
                    self.heap.push(Entry {
                        dist: cand,
                        vertex: ni as u32,
                    });
                    continue;
                }
                let cur = self.dist[ni];
                if (cand.value() - cur.value()).abs() <= TIE_TOLERANCE {
                    ties += 1;
                }
                let better = cand < cur
                    || (cand == cur && {
                        let old = self.pred_edge(ni);
                        e < old
                    });
                if better {
                    self.dist[ni] = cand;
                    self.pred[ni] = dir as u8;
                    self.heap.push(Entry {
                        dist: cand,
                        vertex: ni as u32,
                    });
                }
            }
        }
        debug_assert!(reached, "the box is connected");

        let mut geodesic = Vec::new();
        let mut touched = grid.on_boundary(target);
        let mut v = dst as usize;
        while self.pred[v] != NO_PRED && v != src as usize {
            let e = self.pred_edge(v);
            let (dx, dy) = DIRS[self.pred[v] as usize];
            let here = grid.vertex_at(v);
            let prev = (here.0 - dx, here.1 - dy);
            touched |= grid.on_boundary(prev);
            geodesic.push(e);
            v = grid.vertex_index(prev);
        }
        geodesic.reverse();
        Ok(PassageResult {
            r: env.schedule().map_or(0.0, |s| s.r),
            time: self.dist[dst as usize].value(),
            geodesic,
            restriction_radius: radius,
            touched_boundary: touched,
            ties,
            settled,
        })
    }

    fn pred_edge(&self, v: usize) -> EdgeId {
        let (dx, dy) = DIRS[self.pred[v] as usize];
        let here = self.grid.vertex_at(v);
        EdgeId::between((here.0 - dx, here.1 - dy), here).expect("neighbours")
    }

    /// T_r(source, target) for each r, on the latents of `env`.
    pub fn profile(
        &mut self,
        env: &Environment,
        n: u64,
        r_values: &[f64],
        source: Vertex,
        target: Vertex,
    ) -> Result<Vec<PassageResult>, FppError> {
        let base = env.unperturbed();
        r_values
            .iter()
            .map(|&r| {
                let perturbed = base.perturb(&tau_schedule(n, r)?)?;
                self.solve(&perturbed, source, target)
            })
            .collect()
    }
}

/// One-shot T^R(source, target).
pub fn passage_time(
    env: &Environment,
    source: Vertex,
    target: Vertex,
    radius: u32,
) -> Result<PassageResult, FppError> {
    PassageSolver::new(radius)?.solve(env, source, target)
}

/// One-shot profile r ↦ T_r(source, target) over `r_values`.
pub fn passage_time_profile(
    env: &Environment,
    n: u64,
    r_values: &[f64],
    source: Vertex,
    target: Vertex,
    radius: u32,
) -> Result<Vec<PassageResult>, FppError> {
    PassageSolver::new(radius)?.profile(env, n, r_values, source, target)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coupling::QuantileCoupling;
    use crate::distributions::WeightLaw;
    use crate::fpp::accumulate;
    use crate::lattice::norm_inf;
    use crate::rng::RngStream;

    fn exp_env(radius: u32, seed: u64) -> Environment {
        Environment::sample(
            WeightLaw::exponential(1.0).unwrap(),
            GridBox::new(radius).unwrap(),
            seed,
        )
        .unwrap()
    }

    fn exp_coupling() -> Arc<QuantileCoupling> {
        Arc::new(QuantileCoupling::new(WeightLaw::exponential(1.0).unwrap()).unwrap())
    }

    #[test]
    fn source_equals_target() {
        let res = passage_time(&exp_env(3, 1), (1, 1), (1, 1), 3).unwrap();
        assert_eq!(res.time, 0.0);
        assert!(res.geodesic.is_empty());
    }

    #[test]
    fn unit_weights_give_l1_distance() {
        let grid = GridBox::new(5).unwrap();
        let weights = vec![1.0; grid.edge_slots()];
        let env = Environment::from_weights(exp_coupling(), grid, weights).unwrap();
        for (s, t) in [((0, 0), (3, -2)), ((-5, 5), (5, -5)), ((2, 2), (2, -4))] {
            let res = passage_time(&env, s, t, 5).unwrap();
            let l1 = ((s.0 - t.0).abs() + (s.1 - t.1).abs()) as f64;
            assert_eq!(res.time, l1);
            assert_eq!(res.geodesic.len(), l1 as usize);
        }
    }

    #[test]
    fn manual_two_by_two_matches_enumeration() {
        // On [−1, 1]² from (−1, −1) to (1, 1) the cheapest route is forced
        // through the low-weight edges.
        let grid = GridBox::new(1).unwrap();
        let mut weights = vec![5.0; grid.edge_slots()];
        for e in [
            EdgeId::between((-1, -1), (-1, 0)).unwrap(),
            EdgeId::between((-1, 0), (0, 0)).unwrap(),
            EdgeId::between((0, 0), (0, 1)).unwrap(),
            EdgeId::between((0, 1), (1, 1)).unwrap(),
        ] {
            weights[grid.edge_slot(e)] = 0.25;
        }
        let env = Environment::from_weights(exp_coupling(), grid, weights).unwrap();
        let res = passage_time(&env, (-1, -1), (1, 1), 1).unwrap();
        assert_eq!(res.time, 1.0);
        assert_eq!(res.geodesic.len(), 4);
        assert!(res.touched_boundary);
    }

    #[test]
    fn time_equals_geodesic_weight_and_path_is_simple() {
        let env = exp_env(24, 8);
        let res = passage_time(&env, (0, 0), (16, 0), 24).unwrap();
        let w = env.path_weight(&res.geodesic).unwrap();
        assert!((w - res.time).abs() <= 1e-9 * res.geodesic.len() as f64);
        let mut at = (0, 0);
        let mut visited = vec![at];
        for e in &res.geodesic {
            let (a, b) = e.endpoints();
            at = if a == at { b } else { assert_eq!(b, at); a };
            assert!(!visited.contains(&at));
            visited.push(at);
        }
        assert_eq!(at, (16, 0));
    }

    #[test]
    fn symmetric_and_triangle() {
        let env = exp_env(10, 21);
        let mut solver = PassageSolver::new(10).unwrap();
        let mut rng = RngStream::new(4);
        let mut pick = || {
            (
                rng.next_below(21) as i32 - 10,
                rng.next_below(21) as i32 - 10,
            )
        };
        for _ in 0..30 {
            let (u, v, w) = (pick(), pick(), pick());
            let uv = solver.solve(&env, u, v).unwrap().time;
            let vu = solver.solve(&env, v, u).unwrap().time;
            let vw = solver.solve(&env, v, w).unwrap().time;
            let uw = solver.solve(&env, u, w).unwrap().time;
            assert!((uv - vu).abs() <= 1e-12 * (1.0 + uv));
            assert!(uw <= uv + vw + 1e-12);
        }
    }

    /// Exhaustive minimum over simple paths by depth-first search, pruning
    /// partial sums that already reach the best complete one.
    fn brute_force(env: &Environment, grid: GridBox, s: Vertex, t: Vertex) -> Dd {
        fn go(
            env: &Environment,
            grid: GridBox,
            at: Vertex,
            t: Vertex,
            acc: Dd,
            on_path: &mut Vec<Vertex>,
            best: &mut Dd,
        ) {
            if at == t {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for (dx, dy) in DIRS {
                let next = (at.0 + dx, at.1 + dy);
                if !grid.contains(next) || on_path.contains(&next) {
                    continue;
                }
                let w = env.weight(EdgeId::between(at, next).unwrap()).unwrap();
                let cand = acc.add(w);
                if cand >= *best {
                    continue;
                }
                on_path.push(next);
                go(env, grid, next, t, cand, on_path, best);
                on_path.pop();
            }
        }
        let mut best = Dd {
            hi: f64::INFINITY,
            lo: 0.0,
        };
        go(env, grid, s, t, Dd::ZERO, &mut vec![s], &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_small_boxes() {
        let mut rng = RngStream::new(77);
        for seed in 0..20u64 {
            let env = exp_env(2, seed);
            let grid = GridBox::new(2).unwrap();
            let s = grid.vertex_at(rng.next_below(25) as usize);
            let t = grid.vertex_at(rng.next_below(25) as usize);
            let res = passage_time(&env, s, t, 2).unwrap();
            let want = brute_force(&env, grid, s, t);
            if s == t {
                assert_eq!(res.time, 0.0);
            } else {
                assert_eq!(res.time, want.value(), "seed {seed}");
            }
        }
    }

    #[test]
    fn restriction_is_monotone_and_stabilises() {
        let env = exp_env(40, 5);
        let mut prev = f64::INFINITY;
        let mut last_free = None;
        for radius in [10u32, 12, 16, 24, 32, 40] {
            let res = passage_time(&env, (0, 0), (10, 0), radius).unwrap();
            assert!(res.time <= prev);
            prev = res.time;
            if let Some(t) = last_free {
                assert_eq!(res.time, t);
            }
            if !res.touched_boundary {
                last_free = Some(res.time);
            }
        }
        assert!(last_free.is_some());
    }

    #[test]
    fn profile_is_monotone_and_matches_single_solves() {
        let env = exp_env(64, 12);
        let rs: Vec<f64> = (0..16).map(|i| -1.0 + 2.0 * i as f64 / 15.0).collect();
        let profile = passage_time_profile(&env, 16, &rs, (0, 0), (16, 0), 64).unwrap();
        for w in profile.windows(2) {
            assert!(w[1].time >= w[0].time);
        }
        let at_zero = passage_time_profile(&env, 16, &[0.0], (0, 0), (16, 0), 64).unwrap();
        assert_eq!(at_zero[0].time, passage_time(&env, (0, 0), (16, 0), 64).unwrap().time);
        let direct = env.perturb(&tau_schedule(16, rs[3]).unwrap()).unwrap();
        assert_eq!(passage_time(&direct, (0, 0), (16, 0), 64).unwrap().time, profile[3].time);
    }

    #[test]
    fn solver_reuse_does_not_leak_between_environments() {
        let mut solver = PassageSolver::new(12).unwrap();
        for seed in [1u64, 2, 1, 3] {
            let env = exp_env(12, seed);
            let fresh = passage_time(&env, (0, 0), (8, 3), 12).unwrap();
            let reused = solver.solve(&env, (0, 0), (8, 3)).unwrap();
            assert_eq!(fresh, reused);
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let env = exp_env(4, 1);
        assert!(passage_time(&env, (0, 0), (5, 0), 4).is_err());
        assert!(passage_time(&env, (0, 0), (1, 0), 6).is_err());
        let g = Arc::new(QuantileCoupling::new(WeightLaw::gaussian()).unwrap());
        let genv = Environment::coupling_test(g, GridBox::new(4).unwrap(), 1);
        assert!(matches!(
            passage_time(&genv, (0, 0), (1, 0), 4),
            Err(FppError::NonPositiveSupport(_))
        ));
    }

    #[test]
    fn accumulate_agrees_with_dijkstra_along_geodesic() {
        let env = exp_env(20, 33);
        let res = passage_time(&env, (0, 0), (0, 12), 20).unwrap();
        let ws: Vec<f64> = res.geodesic.iter().map(|&e| env.weight(e).unwrap()).collect();
        assert_eq!(accumulate(ws).value(), res.time);
        assert!(res.geodesic.iter().all(|e| norm_inf(e.endpoints().1) <= 20));
    }
}
