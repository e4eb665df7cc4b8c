//! Two-dimensional Poisson range sums by recursive 4-way splits.
//!
//! A 2D dyadic node `(a, b)` is generated from its direct generation
//! ancestors: the horizontal parent `(a, parent(b))`, the vertical parent
//! `(parent(a), b)` and the lattice grandparent `(parent(a), parent(b))`.
//! Conditioned on those three sums, the lower-left quadrant of the
//! grandparent is hypergeometric; the other three quadrants follow by
//! subtraction. Strips spanning a full axis split like a 1D tree, and the
//! root is a single Poisson draw.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::dst::binom;
use crate::error::{Error, Result};
use crate::randomness::{Domain, MasterSeed, Prf};
use crate::sampling::{self, MAX_POISSON_MEAN};
use crate::universe::{decompose_dyadic_1d, Dyadic, RangeD, Universe};

/// Node keys pack two heap indices of `L+1` bits each into 60 bits.
pub const MAX_LOG2_DELTA_2D: u32 = 29;

/// Realized nodes per fresh range query stay below `NODE_BOUND_FACTOR·(2L+2)²`.
///
/// Splits happen only at products of 1D ancestors of the two range
/// endpoints, and each split realizes at most four children.
pub const NODE_BOUND_FACTOR: u64 = 4;

// Block offsets separating the kinds of split a node's stream may drive.
const QUAD_BLOCK: u64 = 0;
const SPLIT_A_BLOCK: u64 = 1;
const SPLIT_B_BLOCK: u64 = 2;
const ROOT_STREAM: u64 = 0;

/// The 2D dyadic rectangle `a × b` (first axis `a`, second axis `b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dyadic2 {
    pub a: Dyadic,
    pub b: Dyadic,
}

impl Dyadic2 {
    pub const FULL: Dyadic2 = Dyadic2 { a: Dyadic::FULL, b: Dyadic::FULL };

    pub fn new(a: Dyadic, b: Dyadic) -> Self {
        Self { a, b }
    }

    pub fn leaf(i: u64, j: u64, log2_delta: u32) -> Self {
        Self { a: Dyadic::leaf(i, log2_delta), b: Dyadic::leaf(j, log2_delta) }
    }

    pub fn range(&self, log2_delta: u32) -> RangeD {
        RangeD::from_axes(vec![self.a.range(log2_delta), self.b.range(log2_delta)]).expect("dyadic ranges are nonempty")
    }

    fn key(&self, log2_delta: u32) -> u64 {
        (self.a.heap_index() << (log2_delta + 1)) | self.b.heap_index()
    }
}

/// Direct generation ancestors of a non-root node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dgas {
    pub horizontal: Option<Dyadic2>,
    pub vertical: Option<Dyadic2>,
    pub grandparent: Option<Dyadic2>,
}

pub fn dgas(n: Dyadic2) -> Result<Dgas> {
    let (pa, pb) = (n.a.parent(), n.b.parent());
    if pa.is_none() && pb.is_none() {
        return Err(Error::InvalidRange("the universe has no generation ancestors".into()));
    }
    Ok(Dgas {
        horizontal: pb.map(|pb| Dyadic2::new(n.a, pb)),
        vertical: pa.map(|pa| Dyadic2::new(pa, n.b)),
        grandparent: pa.zip(pb).map(|(pa, pb)| Dyadic2::new(pa, pb)),
    })
}

fn check_four_way(s_h: u64, s_v: u64, s_g: u64) -> Result<()> {
    if s_h > s_g || s_v > s_g {
        return Err(Error::InvalidState(format!("parent sums ({s_h}, {s_v}) exceed grandparent sum {s_g}")));
    }
    Ok(())
}

/// Lower-left quadrant given the horizontal parent `s_h`, vertical parent
/// `s_v` and grandparent `s_g`: Hypergeometric(s_g, s_v, s_h).
pub fn four_way_split_sample<R: rand_core::RngCore>(s_h: u64, s_v: u64, s_g: u64, rng: &mut R) -> Result<u64> {
    check_four_way(s_h, s_v, s_g)?;
    sampling::hypergeometric(s_g, s_v, s_h, rng)
}

/// Exact law of [`four_way_split_sample`] over its support.
pub fn four_way_split_pmf(s_h: u64, s_v: u64, s_g: u64) -> Result<Vec<(u64, BigRational)>> {
    check_four_way(s_h, s_v, s_g)?;
    let lo = (s_h + s_v).saturating_sub(s_g);
    let hi = s_h.min(s_v);
    let total: BigInt = binom(s_g, s_h);
    Ok((lo..=hi).map(|x| (x, BigRational::new(binom(s_v, x) * binom(s_g - s_v, s_h - x), total.clone()))).collect())
}

/// Range-summable i.i.d. Poisson(λ) variables over `[0, Δ)²`.
#[derive(Clone)]
pub struct PoissonErs2D {
    universe: Universe,
    lambda: f64,
    prf: Prf,
    pinned_root: Option<u64>,
    memo: HashMap<Dyadic2, u64>,
}

impl fmt::Debug for PoissonErs2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonErs2D")
            .field("universe", &self.universe)
            .field("lambda", &self.lambda)
            .field("pinned_root", &self.pinned_root)
            .field("realized", &self.memo.len())
            .finish()
    }
}

impl PoissonErs2D {
    pub fn new(log2_delta: u32, lambda: f64, seed: &MasterSeed) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Unsupported(format!("Poisson rate must be positive and finite, got {lambda}")));
        }
        let universe = Self::universe_for(log2_delta)?;
        let mean = lambda * (universe.delta() as f64).powi(2);
        if mean > MAX_POISSON_MEAN {
            return Err(Error::Unsupported(format!("total mean λΔ² = {mean} exceeds {MAX_POISSON_MEAN}")));
        }
        Ok(Self { universe, lambda, prf: Prf::new(seed, Domain::Poisson2d), pinned_root: None, memo: HashMap::new() })
    }

    /// An instance whose total is fixed to `total`; everything below it is
    /// drawn from the conditional laws as usual.
    pub fn with_root(log2_delta: u32, total: u64, seed: &MasterSeed) -> Result<Self> {
        let universe = Self::universe_for(log2_delta)?;
        Ok(Self {
            universe,
            lambda: f64::NAN,
            prf: Prf::new(seed, Domain::Poisson2d),
            pinned_root: Some(total),
            memo: HashMap::new(),
        })
    }

    fn universe_for(log2_delta: u32) -> Result<Universe> {
        if log2_delta > MAX_LOG2_DELTA_2D {
            return Err(Error::Unsupported(format!(
                "2D Poisson supports log2(delta) <= {MAX_LOG2_DELTA_2D}, got {log2_delta}"
            )));
        }
        Universe::new(2, log2_delta)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    /// Rate of each cell; NaN for instances with a pinned total.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of realized (memoized) nodes.
    pub fn realized(&self) -> usize {
        self.memo.len()
    }

    fn l(&self) -> u32 {
        self.universe.log2_delta()
    }

    fn stream(&self, node: Dyadic2, block: u64) -> rand_chacha::ChaCha20Rng {
        self.prf.stream(node.key(self.l()), block)
    }

    fn store(&mut self, node: Dyadic2, v: u64) -> Result<()> {
        if let Some(old) = self.memo.insert(node, v) {
            if old != v {
                return Err(Error::Internal(format!("node {node:?} realized twice ({old} then {v})")));
            }
        }
        Ok(())
    }

    pub fn dyadic_sum(&mut self, n: Dyadic2) -> Result<u64> {
        if n.a.level > self.l() || n.b.level > self.l() {
            return Err(Error::InvalidRange(format!("node {n:?} lies below the leaves")));
        }
        if let Some(&v) = self.memo.get(&n) {
            return Ok(v);
        }
        match (n.a.parent(), n.b.parent()) {
            (None, None) => {
                let v = match self.pinned_root {
                    Some(v) => v,
                    None => {
                        let mean = self.lambda * (self.universe.delta() as f64).powi(2);
                        sampling::poisson(mean, &mut self.prf.stream(ROOT_STREAM, 0))?
                    }
                };
                self.store(n, v)?;
            }
            (None, Some(pb)) => {
                let parent = Dyadic2::new(n.a, pb);
                let z = self.dyadic_sum(parent)?;
                let lower = sampling::binomial_half(z, &mut self.stream(parent, SPLIT_B_BLOCK))?;
                let (b0, b1) = pb.children();
                self.store(Dyadic2::new(n.a, b0), lower)?;
                self.store(Dyadic2::new(n.a, b1), z - lower)?;
            }
            (Some(pa), None) => {
                let parent = Dyadic2::new(pa, n.b);
                let z = self.dyadic_sum(parent)?;
                let lower = sampling::binomial_half(z, &mut self.stream(parent, SPLIT_A_BLOCK))?;
                let (a0, a1) = pa.children();
                self.store(Dyadic2::new(a0, n.b), lower)?;
                self.store(Dyadic2::new(a1, n.b), z - lower)?;
            }
            (Some(pa), Some(pb)) => {
                let g = Dyadic2::new(pa, pb);
                let (a0, a1) = pa.children();
                let (b0, b1) = pb.children();
                let s_g = self.dyadic_sum(g)?;
                let s_h = self.dyadic_sum(Dyadic2::new(a0, pb))?;
                let s_v = self.dyadic_sum(Dyadic2::new(pa, b0))?;
                let x = four_way_split_sample(s_h, s_v, s_g, &mut self.stream(g, QUAD_BLOCK))?;
                let q11 = (s_g + x)
                    .checked_sub(s_h + s_v)
                    .ok_or_else(|| Error::Internal(format!("negative quadrant under {g:?}")))?;
                self.store(Dyadic2::new(a0, b0), x)?;
                self.store(Dyadic2::new(a0, b1), s_h - x)?;
                self.store(Dyadic2::new(a1, b0), s_v - x)?;
                self.store(Dyadic2::new(a1, b1), q11)?;
            }
        }
        Ok(self.memo[&n])
    }

    pub fn range_sum_2d(&mut self, r: &RangeD) -> Result<u64> {
        if r.dims() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: r.dims() });
        }
        r.check(&self.universe)?;
        let pa = decompose_dyadic_1d(r.axes()[0], &self.universe)?;
        let pb = decompose_dyadic_1d(r.axes()[1], &self.universe)?;
        let mut total = 0u64;
        for &a in &pa {
            for &b in &pb {
                total += self.dyadic_sum(Dyadic2::new(a, b))?;
            }
        }
        Ok(total)
    }

    /// Realizes every leaf and returns the grid, row-major (`[i][j]` at `i·Δ + j`).
    pub fn materialize(&mut self, cap: u64) -> Result<Vec<u64>> {
        let cells = self.universe.cells().unwrap_or(u64::MAX);
        if cells > cap {
            return Err(Error::OracleTooLarge { size: cells, cap });
        }
        let (delta, l) = (self.universe.delta(), self.l());
        let mut out = Vec::with_capacity(cells as usize);
        for i in 0..delta {
            for j in 0..delta {
                out.push(self.dyadic_sum(Dyadic2::leaf(i, j, l))?);
            }
        }
        Ok(out)
    }

    /// Checks that every realized node with realized children equals their sum,
    /// for both the quadrant split and the two strip splits.
    pub fn check_conservation(&self) -> Result<()> {
        for (&n, &v) in &self.memo {
            let a_kids = (n.a.level < self.l()).then(|| n.a.children());
            let b_kids = (n.b.level < self.l()).then(|| n.b.children());
            let get = |a: Dyadic, b: Dyadic| self.memo.get(&Dyadic2::new(a, b)).copied();
            let mut groups: Vec<Vec<Option<u64>>> = Vec::new();
            if let Some((a0, a1)) = a_kids {
                groups.push(vec![get(a0, n.b), get(a1, n.b)]);
            }
            if let Some((b0, b1)) = b_kids {
                groups.push(vec![get(n.a, b0), get(n.a, b1)]);
            }
            if let (Some((a0, a1)), Some((b0, b1))) = (a_kids, b_kids) {
                groups.push(vec![get(a0, b0), get(a0, b1), get(a1, b0), get(a1, b1)]);
            }
            for g in groups {
                if g.iter().all(Option::is_some) {
                    let s: u64 = g.iter().flatten().sum();
                    if s != v {
                        return Err(Error::Internal(format!("children of {n:?} sum to {s}, node holds {v}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    fn d(level: u32, index: u64) -> Dyadic {
        Dyadic { level, index }
    }

    fn rat(n: i64, den: i64) -> BigRational {
        BigRational::new(n.into(), den.into())
    }

    #[test]
    fn dgas_examples() {
        // [6,7)x[6,8) at Δ=8
        let n = Dyadic2::new(d(3, 6), d(2, 3));
        let g = dgas(n).unwrap();
        assert_eq!(g.horizontal.unwrap().range(3).to_string(), "[6,7)x[4,8)");
        assert_eq!(g.vertical.unwrap().range(3).to_string(), "[6,8)x[6,8)");
        assert_eq!(g.grandparent.unwrap().range(3).to_string(), "[6,8)x[4,8)");

        let strip = dgas(Dyadic2::new(d(2, 2), Dyadic::FULL)).unwrap();
        assert_eq!(strip.horizontal, None);
        assert_eq!(strip.grandparent, None);
        assert_eq!(strip.vertical.unwrap().range(3).to_string(), "[4,8)x[0,8)");

        let small = dgas(Dyadic2::leaf(0, 0, 1)).unwrap();
        assert_eq!(small.horizontal.unwrap().range(1).to_string(), "[0,1)x[0,2)");
        assert_eq!(small.vertical.unwrap().range(1).to_string(), "[0,2)x[0,1)");
        assert_eq!(small.grandparent, Some(Dyadic2::FULL));

        assert!(dgas(Dyadic2::FULL).is_err());
    }

    #[test]
    fn four_way_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for s in 0..6 {
            assert_eq!(four_way_split_sample(s, s, s, &mut rng).unwrap(), s);
        }
        assert_eq!(four_way_split_sample(0, 0, 0, &mut rng).unwrap(), 0);
        assert_eq!(four_way_split_pmf(1, 1, 2).unwrap(), vec![(0, rat(1, 2)), (1, rat(1, 2))]);
        assert!(matches!(four_way_split_sample(3, 1, 2, &mut rng), Err(Error::InvalidState(_))));
        assert!(four_way_split_pmf(1, 3, 2).is_err());
    }

    #[test]
    fn zero_root_zeroes_everything() {
        let mut p = PoissonErs2D::with_root(3, 0, &MasterSeed::from_u64(1)).unwrap();
        assert!(p.materialize(64).unwrap().iter().all(|&v| v == 0));
        p.check_conservation().unwrap();
    }

    #[test]
    fn four_leaves_add_to_root() {
        for s in 0..10_000 {
            let mut p = PoissonErs2D::new(1, 1.0, &MasterSeed::from_u64(s)).unwrap();
            let total = p.dyadic_sum(Dyadic2::FULL).unwrap();
            assert_eq!(p.materialize(4).unwrap().iter().sum::<u64>(), total);
        }
    }

    #[test]
    fn full_square_and_halves() {
        for s in 0..50 {
            let mut p = PoissonErs2D::new(4, 1.5, &MasterSeed::from_u64(s)).unwrap();
            let full = p.range_sum_2d(&RangeD::new(&[0, 0], &[16, 16]).unwrap()).unwrap();
            assert_eq!(full, p.dyadic_sum(Dyadic2::FULL).unwrap());
            let left = p.range_sum_2d(&RangeD::new(&[0, 0], &[16, 7]).unwrap()).unwrap();
            let right = p.range_sum_2d(&RangeD::new(&[0, 7], &[16, 16]).unwrap()).unwrap();
            assert_eq!(left + right, full);
        }
    }

    #[test]
    fn rejects_unsupported_configurations() {
        let s = MasterSeed::from_u64(0);
        assert!(PoissonErs2D::new(30, 1.0, &s).is_err());
        assert!(PoissonErs2D::new(26, 1.0, &s).is_err());
        assert!(PoissonErs2D::new(4, 0.0, &s).is_err());
        let mut p = PoissonErs2D::new(3, 1.0, &s).unwrap();
        assert!(p.range_sum_2d(&RangeD::new(&[0], &[4]).unwrap()).is_err());
        assert!(p.dyadic_sum(Dyadic2::new(d(4, 0), Dyadic::FULL)).is_err());
        assert!(p.materialize(10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn order_independent_and_conserving(
            s in any::<u64>(),
            boxes in proptest::collection::vec((0u64..16, 0u64..16, 1u64..16, 1u64..16), 1..12),
        ) {
            let ranges: Vec<RangeD> = boxes.iter().map(|&(i, j, h, w)| {
                RangeD::new(&[i, j], &[(i + h).min(16), (j + w).min(16)]).unwrap()
            }).collect();
            let mut fwd = PoissonErs2D::new(4, 2.0, &MasterSeed::from_u64(s)).unwrap();
            let mut rev = fwd.clone();
            let a: Vec<u64> = ranges.iter().map(|r| fwd.range_sum_2d(r).unwrap()).collect();
            let mut b: Vec<u64> = ranges.iter().rev().map(|r| rev.range_sum_2d(r).unwrap()).collect();
            b.reverse();
            prop_assert_eq!(a, b);
            fwd.check_conservation().unwrap();
        }

        #[test]
        fn realized_nodes_per_fresh_query_are_bounded(
            s in any::<u64>(), l in 1u32..=6, i in any::<u64>(), j in any::<u64>(), h in any::<u64>(), w in any::<u64>(),
        ) {
            let delta = 1u64 << l;
            let (i, j) = (i % delta, j % delta);
            let r = RangeD::new(&[i, j], &[i + 1 + h % (delta - i), j + 1 + w % (delta - j)]).unwrap();
            let mut p = PoissonErs2D::new(l, 1.0, &MasterSeed::from_u64(s)).unwrap();
            p.range_sum_2d(&r).unwrap();
            let bound = NODE_BOUND_FACTOR * (2 * l as u64 + 2).pow(2);
            prop_assert!(p.realized() as u64 <= bound, "{} > {}", p.realized(), bound);
        }
    }
}
