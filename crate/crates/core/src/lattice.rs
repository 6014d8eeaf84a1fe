//! Geometry of Z²: boxes, edge ids, dyadic annuli and short paths inside them.
//!
//! Norms are ℓ∞ throughout. An edge belongs to the annulus set Λ_k when the
//! larger ℓ∞ norm of its endpoints lies in (2^k, 2^{k+1}]; this is the same
//! as "both endpoints in [−2^{k+1}, 2^{k+1}]² \ [−2^k, 2^k]², or one there and
//! the other in [−2^k, 2^k]²".

use serde::Serialize;
use thiserror::Error;

pub type Vertex = (i32, i32);

const OFFSET: i64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("scale n = {0} is below the supported minimum 16")]
    ScaleTooSmall(u64),
    #[error("box radius must be positive")]
    InvalidRadius,
    #[error("vertex ({x}, {y}) lies outside [-{radius}, {radius}]²")]
    OutsideBox { x: i32, y: i32, radius: u32 },
    #[error("P_{k} has more than {cap} paths (stopped after {partial})")]
    CapExceeded { k: u32, cap: usize, partial: usize },
    #[error("P_k enumeration is limited to k ≤ {max}, got {k}")]
    ScaleTooLarge { k: u32, max: u32 },
}

#[inline]
pub fn norm_inf(v: Vertex) -> u32 {
    v.0.unsigned_abs().max(v.1.unsigned_abs())
}

/// A nearest-neighbour edge of Z², packed as `(x, y, axis)` so that integer
/// order is lexicographic order. Axis 0 joins (x, y)–(x+1, y), axis 1 joins
/// (x, y)–(x, y+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EdgeId(pub u64);

impl EdgeId {
    #[inline]
    pub fn new(x: i32, y: i32, axis: u8) -> Self {
        debug_assert!(axis < 2);
        let ux = (x as i64 + OFFSET) as u64;
        let uy = (y as i64 + OFFSET) as u64;
        EdgeId((ux << 32) | (uy << 1) | axis as u64)
    }

    /// The edge joining two neighbouring vertices, if they are neighbours.
    pub fn between(a: Vertex, b: Vertex) -> Option<Self> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match (hi.0 - lo.0, hi.1 - lo.1) {
            (1, 0) => Some(Self::new(lo.0, lo.1, 0)),
            (0, 1) => Some(Self::new(lo.0, lo.1, 1)),
            _ => None,
        }
    }

    #[inline]
    pub fn x(self) -> i32 {
        ((self.0 >> 32) as i64 - OFFSET) as i32
    }

    #[inline]
    pub fn y(self) -> i32 {
        (((self.0 >> 1) & 0x7fff_ffff) as i64 - OFFSET) as i32
    }

    #[inline]
    pub fn axis(self) -> u8 {
        (self.0 & 1) as u8
    }

    /// The two endpoints, lower one first.
    #[inline]
    pub fn endpoints(self) -> (Vertex, Vertex) {
        let (x, y) = (self.x(), self.y());
        if self.axis() == 0 {
            ((x, y), (x + 1, y))
        } else {
            ((x, y), (x, y + 1))
        }
    }

    /// Larger ℓ∞ norm of the two endpoints.
    #[inline]
    pub fn max_norm(self) -> u32 {
        let (a, b) = self.endpoints();
        norm_inf(a).max(norm_inf(b))
    }
}

/// The annulus scale k with `e ∈ Λ_k`, or `None` for the four edges at the
/// origin, which lie in no annulus.
#[inline]
pub fn edge_scale(e: EdgeId) -> Option<u32> {
    let m = e.max_norm();
    if m < 2 {
        None
    } else {
        Some(31 - (m - 1).leading_zeros())
    }
}

#[inline]
pub fn in_annulus(e: EdgeId, k: u32) -> bool {
    edge_scale(e) == Some(k)
}

/// Number of edges with both endpoints in [−r, r]².
#[inline]
pub fn box_edge_count(r: u64) -> u64 {
    2 * (2 * r + 1) * (2 * r)
}

/// |Λ_k| = 24·4^k + 4·2^k, the edge count difference of the boxes of radius
/// 2^{k+1} and 2^k.
pub fn annulus_size(k: u32) -> u64 {
    box_edge_count(1 << (k + 1)) - box_edge_count(1 << k)
}

/// Λ_k in edge-id order.
pub fn annulus_edges(k: u32) -> Vec<EdgeId> {
    let outer = 1i32 << (k + 1);
    let mut out = Vec::with_capacity(annulus_size(k) as usize);
    for x in -outer..=outer {
        for y in -outer..=outer {
            for axis in 0..2 {
                let e = EdgeId::new(x, y, axis);
                if in_annulus(e, k) {
                    out.push(e);
                }
            }
        }
    }
    out
}

/// Vertices incident to at least one edge of Λ_k: the closed annulus
/// 2^k ≤ ‖v‖ ≤ 2^{k+1}.
pub fn annulus_vertex_count(k: u32) -> u64 {
    let side = |r: u64| (2 * r + 1) * (2 * r + 1);
    let inner = 1u64 << k;
    side(inner << 1) - side(inner - 1)
}

/// The dyadic scales k0 = ⌊log₂ √n⌋ and k1 = ⌊log₂ n⌋ − 1 of a distance n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AnnulusIndex {
    pub n: u64,
    pub k0: u32,
    pub k1: u32,
}

impl AnnulusIndex {
    pub fn contains(&self, k: u32) -> bool {
        (self.k0..=self.k1).contains(&k)
    }
}

pub fn scales(n: u64) -> Result<AnnulusIndex, LatticeError> {
    if n < 16 {
        return Err(LatticeError::ScaleTooSmall(n));
    }
    let log2n = 63 - n.leading_zeros();
    // ⌊log₂ √n⌋ = ⌊⌊log₂ n⌋ / 2⌋
    Ok(AnnulusIndex {
        n,
        k0: log2n / 2,
        k1: log2n - 1,
    })
}

/// The box [−R, R]² with dense vertex and edge-slot indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridBox {
    pub radius: u32,
}

impl GridBox {
    pub fn new(radius: u32) -> Result<Self, LatticeError> {
        if radius == 0 || radius > (1 << 28) {
            return Err(LatticeError::InvalidRadius);
        }
        Ok(Self { radius })
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn vertex_count(&self) -> u64 {
        (self.side() as u64).pow(2)
    }

    pub fn edge_count(&self) -> u64 {
        box_edge_count(self.radius as u64)
    }

    #[inline]
    pub fn contains(&self, v: Vertex) -> bool {
        norm_inf(v) <= self.radius
    }

    pub fn check(&self, v: Vertex) -> Result<(), LatticeError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(LatticeError::OutsideBox {
                x: v.0,
                y: v.1,
                radius: self.radius,
            })
        }
    }

    #[inline]
    pub fn contains_edge(&self, e: EdgeId) -> bool {
        let (a, b) = e.endpoints();
        self.contains(a) && self.contains(b)
    }

    #[inline]
    pub fn on_boundary(&self, v: Vertex) -> bool {
        norm_inf(v) == self.radius
    }

    /// Dense index in x-major order; agrees with lexicographic vertex order.
    #[inline]
    pub fn vertex_index(&self, v: Vertex) -> usize {
        let r = self.radius as i32;
        (v.0 + r) as usize * self.side() + (v.1 + r) as usize
    }

    #[inline]
    pub fn vertex_at(&self, index: usize) -> Vertex {
        let r = self.radius as i32;
        let side = self.side();
        ((index / side) as i32 - r, (index % side) as i32 - r)
    }

    /// Number of edge slots, including unused slots that would leave the box.
    #[inline]
    pub fn edge_slots(&self) -> usize {
        2 * self.side() * self.side()
    }

    /// Slot `2·index(lower endpoint) + axis`; increasing in edge id.
    #[inline]
    pub fn edge_slot(&self, e: EdgeId) -> usize {
        2 * self.vertex_index((e.x(), e.y())) + e.axis() as usize
    }

    /// All edges of the box in id order.
    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        let r = self.radius as i32;
        (-r..=r).flat_map(move |x| {
            (-r..=r).flat_map(move |y| {
                (0..2u8)
                    .map(move |axis| EdgeId::new(x, y, axis))
                    .filter(|e| self.contains_edge(*e))
            })
        })
    }
}

const STEPS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// P_k: simple paths of 2^k edges inside Λ_k, each undirected path listed
/// once in the orientation whose start vertex is lexicographically smaller.
/// Stored compactly as a start vertex plus 2-bit step codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSetPk {
    pub k: u32,
    starts: Vec<Vertex>,
    moves: Vec<u64>,
}

impl PathSetPk {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn path_len(&self) -> usize {
        1 << self.k
    }

    /// Vertex sequence of path `i` (2^k + 1 vertices).
    pub fn vertices(&self, i: usize) -> Vec<Vertex> {
        let mut v = self.starts[i];
        let code = self.moves[i];
        let mut out = Vec::with_capacity(self.path_len() + 1);
        out.push(v);
        for step in 0..self.path_len() {
            let (dx, dy) = STEPS[((code >> (2 * step)) & 3) as usize];
            v = (v.0 + dx, v.1 + dy);
            out.push(v);
        }
        out
    }

    pub fn edges(&self, i: usize) -> Vec<EdgeId> {
        self.vertices(i)
            .windows(2)
            .map(|w| EdgeId::between(w[0], w[1]).expect("steps join neighbours"))
            .collect()
    }
}

/// Largest k accepted by `enumerate_paths_pk`.
pub const MAX_ENUMERATION_SCALE: u32 = 4;

/// Exhaustive enumeration of P_k, failing once more than `cap` paths are
/// found.
pub fn enumerate_paths_pk(k: u32, cap: usize) -> Result<PathSetPk, LatticeError> {
    if k > MAX_ENUMERATION_SCALE {
        return Err(LatticeError::ScaleTooLarge {
            k,
            max: MAX_ENUMERATION_SCALE,
        });
    }
    let mut set = PathSetPk {
        k,
        starts: Vec::new(),
        moves: Vec::new(),
    };
    let mut overflow = false;
    walk_annulus_paths(k, &|_| 0.0, f64::INFINITY, &mut |start, code, end| {
        if start < end {
            if set.starts.len() == cap {
                overflow = true;
                return false;
            }
            set.starts.push(start);
            set.moves.push(code);
        }
        true
    });
    if overflow {
        return Err(LatticeError::CapExceeded {
            k,
            cap,
            partial: set.starts.len(),
        });
    }
    Ok(set)
}

/// Counting bound: start vertices in the closed annulus times 3^{2^k}.
pub fn path_count_bound(k: u32) -> u128 {
    annulus_vertex_count(k) as u128 * 3u128.pow(1 << k)
}

/// Searches P_k for a path whose total `cost` is at most `budget`. Costs
/// must be non-negative; partial paths above the budget are pruned, so the
/// search is exhaustive yet cheap when few edges are cheap.
pub fn find_path_pk_within<F>(k: u32, cost: F, budget: f64) -> Option<Vec<EdgeId>>
where
    F: Fn(EdgeId) -> f64,
{
    let mut found = None;
    walk_annulus_paths(k, &cost, budget, &mut |start, code, _| {
        let mut v = start;
        let mut edges = Vec::with_capacity(1 << k);
        for step in 0..(1usize << k) {
            let (dx, dy) = STEPS[((code >> (2 * step)) & 3) as usize];
            let w = (v.0 + dx, v.1 + dy);
            edges.push(EdgeId::between(v, w).expect("neighbours"));
            v = w;
        }
        found = Some(edges);
        false
    });
    found
}

/// Depth-first walk over simple directed paths of 2^k edges in Λ_k with
/// accumulated cost ≤ budget. `visit(start, step_codes, end)` returns false
/// to stop the walk.
fn walk_annulus_paths<C, V>(k: u32, cost: &C, budget: f64, visit: &mut V)
where
    C: Fn(EdgeId) -> f64,
    V: FnMut(Vertex, u64, Vertex) -> bool,
{
    let len = 1usize << k;
    let outer = 1i32 << (k + 1);
    let inner = 1u32 << k;
    let mut stack: Vec<Vertex> = Vec::with_capacity(len + 1);

    struct Walk<'a, C, V> {
        cost: &'a C,
        budget: f64,
        len: usize,
        k: u32,
        visit: &'a mut V,
    }

    fn extend<C, V>(w: &mut Walk<'_, C, V>, stack: &mut Vec<Vertex>, code: u64, spent: f64) -> bool
    where
        C: Fn(EdgeId) -> f64,
        V: FnMut(Vertex, u64, Vertex) -> bool,
    {
        let depth = stack.len() - 1;
        let here = stack[depth];
        if depth == w.len {
            return (w.visit)(stack[0], code, here);
        }
        for (dir, (dx, dy)) in STEPS.iter().enumerate() {
            let next = (here.0 + dx, here.1 + dy);
            let e = EdgeId::between(here, next).expect("neighbours");
            if !in_annulus(e, w.k) || stack.contains(&next) {
                continue;
            }
            let total = spent + (w.cost)(e);
            if total > w.budget {
                continue;
            }
            stack.push(next);
            let more = extend(w, stack, code | ((dir as u64) << (2 * depth)), total);
            stack.pop();
            if !more {
                return false;
            }
        }
        true
    }

    let mut walk = Walk {
        cost,
        budget,
        len,
        k,
        visit,
    };
    for x in -outer..=outer {
        for y in -outer..=outer {
            if norm_inf((x, y)) < inner {
                continue;
            }
            stack.clear();
            stack.push((x, y));
            if !extend(&mut walk, &mut stack, 0, 0.0) {
                return;
            }
        }
    }
}
