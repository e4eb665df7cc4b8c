//! Dyadic range arithmetic and sparse Haar coefficients of range indicators.
//!
//! A universe is `[0, Δ)^d` with `Δ = 2^L`. The 1D Haar matrix has one row per
//! `(scale, location)` pair: scale `-1` is the averaging row `Δ^{-1/2}·1`, and
//! scale `m ≥ 0`, location `j` is the wavelet supported on
//! `[jΔ/2^m, (j+1)Δ/2^m)`, positive on the first half and negative on the
//! second. The d-dimensional transform is the d-fold Kronecker power.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported `log2(Δ)`; keeps `Δ` and every upper bound inside `u64`.
pub const MAX_LOG2_DELTA: u32 = 62;

/// The index universe `[0, 2^L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Universe {
    dims: usize,
    log2_delta: u32,
}

impl Universe {
    pub fn new(dims: usize, log2_delta: u32) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidUniverse("dimension count must be at least 1".into()));
        }
        if log2_delta == 0 || log2_delta > MAX_LOG2_DELTA {
            return Err(Error::InvalidUniverse(format!(
                "log2(delta) must lie in [1, {MAX_LOG2_DELTA}], got {log2_delta}"
            )));
        }
        Ok(Self { dims, log2_delta })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn log2_delta(&self) -> u32 {
        self.log2_delta
    }

    pub fn delta(&self) -> u64 {
        1u64 << self.log2_delta
    }

    /// Number of Haar scales per dimension, `L + 1`.
    pub fn scales_per_dim(&self) -> usize {
        self.log2_delta as usize + 1
    }

    /// `Δ^d`, or `None` if it does not fit in a `u64`.
    pub fn cells(&self) -> Option<u64> {
        let bits = (self.log2_delta as u64).checked_mul(self.dims as u64)?;
        (bits < 64).then(|| 1u64 << bits)
    }

    /// Upper bound on nonzero Haar coefficients of any range indicator: `(2L+2)^d`.
    pub fn range_coeff_bound(&self) -> u64 {
        (2 * self.log2_delta as u64 + 2).saturating_pow(self.dims as u32)
    }

    pub fn check_point(&self, point: &[u64]) -> Result<()> {
        if point.len() != self.dims {
            return Err(Error::DimensionMismatch { expected: self.dims, got: point.len() });
        }
        for &i in point {
            if i >= self.delta() {
                return Err(Error::IndexOutOfRange { index: i, delta: self.delta() });
            }
        }
        Ok(())
    }
}

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Range1D {
    pub lo: u64,
    pub hi: u64,
}

impl Range1D {
    pub fn new(lo: u64, hi: u64) -> Result<Self> {
        if lo >= hi {
            return Err(Error::InvalidRange(format!("[{lo},{hi}) is empty")));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> u64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn check(&self, log2_delta: u32) -> Result<()> {
        let delta = 1u64 << log2_delta;
        if self.lo >= self.hi || self.hi > delta {
            return Err(Error::InvalidRange(format!(
                "[{},{}) is not a nonempty subrange of [0,{delta})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn overlap(&self, lo: u64, hi: u64) -> u64 {
        let a = self.lo.max(lo);
        let b = self.hi.min(hi);
        b.saturating_sub(a)
    }
}

impl fmt::Display for Range1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// Axis-aligned box `[lo_1,hi_1) × … × [lo_d,hi_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeD {
    axes: Vec<Range1D>,
}

impl RangeD {
    pub fn new(lo: &[u64], hi: &[u64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        let axes = lo.iter().zip(hi).map(|(&l, &h)| Range1D::new(l, h)).collect::<Result<Vec<_>>>()?;
        Self::from_axes(axes)
    }

    pub fn from_axes(axes: Vec<Range1D>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidRange("a range needs at least one axis".into()));
        }
        if let Some(bad) = axes.iter().find(|r| r.is_empty()) {
            return Err(Error::InvalidRange(format!("{bad} is empty")));
        }
        Ok(Self { axes })
    }

    /// The unit box `[i, i+1)` around a point.
    pub fn unit(point: &[u64]) -> Result<Self> {
        let axes = point.iter().map(|&i| Range1D::new(i, i + 1)).collect::<Result<Vec<_>>>()?;
        Self::from_axes(axes)
    }

    pub fn full(universe: &Universe) -> Self {
        Self { axes: vec![Range1D { lo: 0, hi: universe.delta() }; universe.dims()] }
    }

    pub fn axes(&self) -> &[Range1D] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn check(&self, universe: &Universe) -> Result<()> {
        if self.axes.len() != universe.dims() {
            return Err(Error::DimensionMismatch { expected: universe.dims(), got: self.axes.len() });
        }
        self.axes.iter().try_for_each(|r| r.check(universe.log2_delta()))
    }

    pub fn contains(&self, point: &[u64]) -> bool {
        point.len() == self.axes.len() && self.axes.iter().zip(point).all(|(r, &i)| r.lo <= i && i < r.hi)
    }

    /// Number of cells in the box (saturating).
    pub fn volume(&self) -> u64 {
        self.axes.iter().fold(1u64, |acc, r| acc.saturating_mul(r.len()))
    }
}

impl fmt::Display for RangeD {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, r) in self.axes.iter().enumerate() {
            if t > 0 {
                f.write_str("x")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Parses `l:u` per dimension, comma separated, e.g. `1:3,0:2`.
impl FromStr for RangeD {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .split(',')
            .map(|part| {
                let (l, u) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidRange(format!("expected `l:u`, got `{part}`")))?;
                let parse =
                    |v: &str| v.trim().parse::<u64>().map_err(|e| Error::InvalidRange(format!("bad bound `{v}`: {e}")));
                Range1D::new(parse(l)?, parse(u)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_axes(axes)
    }
}

/// A 1D dyadic interval: `level` halvings of the universe, `index`-th piece.
///
/// Level 0 is the whole universe and level `L` holds the unit leaves, so the
/// interval is `[index·Δ/2^level, (index+1)·Δ/2^level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dyadic {
    pub level: u32,
    pub index: u64,
}

impl Dyadic {
    pub const FULL: Dyadic = Dyadic { level: 0, index: 0 };

    pub fn new(level: u32, index: u64, log2_delta: u32) -> Result<Self> {
        if level > log2_delta || index >= (1u64 << level) {
            return Err(Error::InvalidRange(format!(
                "no dyadic interval at level {level}, index {index} for L = {log2_delta}"
            )));
        }
        Ok(Self { level, index })
    }

    pub fn leaf(i: u64, log2_delta: u32) -> Self {
        Self { level: log2_delta, index: i }
    }

    pub fn is_full(&self) -> bool {
        self.level == 0
    }

    pub fn len(&self, log2_delta: u32) -> u64 {
        1u64 << (log2_delta - self.level)
    }

    pub fn start(&self, log2_delta: u32) -> u64 {
        self.index << (log2_delta - self.level)
    }

    pub fn range(&self, log2_delta: u32) -> Range1D {
        let lo = self.start(log2_delta);
        Range1D { lo, hi: lo + self.len(log2_delta) }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self { level: self.level - 1, index: self.index >> 1 })
    }

    pub fn children(&self) -> (Self, Self) {
        let level = self.level + 1;
        (Self { level, index: self.index << 1 }, Self { level, index: (self.index << 1) | 1 })
    }

    pub fn sibling(&self) -> Option<Self> {
        (self.level > 0).then_some(Self { level: self.level, index: self.index ^ 1 })
    }

    /// True for the lower (left) child of its parent.
    pub fn is_lower(&self) -> bool {
        self.index & 1 == 0
    }

    /// Heap numbering: the root is 1, children of `k` are `2k` and `2k+1`.
    pub fn heap_index(&self) -> u64 {
        (1u64 << self.level) | self.index
    }
}

/// Canonical greedy decomposition of `[lo, hi)` into maximal dyadic intervals,
/// returned in ascending order.
pub fn decompose_dyadic_1d(r: Range1D, universe: &Universe) -> Result<Vec<Dyadic>> {
    let l = universe.log2_delta();
    r.check(l)?;
    let mut out = Vec::new();
    let mut cur = r.lo;
    while cur < r.hi {
        // Largest aligned block starting at `cur` ...
        let mut size_log = if cur == 0 { l } else { cur.trailing_zeros().min(l) };
        // ... that still fits.
        while cur + (1u64 << size_log) > r.hi {
            size_log -= 1;
        }
        out.push(Dyadic { level: l - size_log, index: cur >> size_log });
        cur += 1u64 << size_log;
    }
    Ok(out)
}

/// Index of one Haar basis vector in 1D: `scale ∈ [-1, L)`, `location ∈ [0, 2^max(0,scale))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HaarIndex {
    pub scale: i32,
    pub location: u64,
}

impl HaarIndex {
    pub const AVERAGE: HaarIndex = HaarIndex { scale: -1, location: 0 };

    pub fn new(scale: i32, location: u64, log2_delta: u32) -> Result<Self> {
        let ok = match scale {
            -1 => location == 0,
            m if m >= 0 && (m as u32) < log2_delta => location < (1u64 << m),
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidRange(format!(
                "no Haar vector at scale {scale}, location {location} for L = {log2_delta}"
            )));
        }
        Ok(Self { scale, location })
    }

    /// Row of this vector in the Haar matrix (dictionary order of `(scale, location)`).
    pub fn row(&self) -> u64 {
        if self.scale < 0 {
            0
        } else {
            (1u64 << self.scale) + self.location
        }
    }

    pub fn from_row(row: u64) -> Self {
        if row == 0 {
            Self::AVERAGE
        } else {
            let scale = 63 - row.leading_zeros();
            Self { scale: scale as i32, location: row - (1u64 << scale) }
        }
    }

    /// Position of the scale among `-1, 0, …, L-1`.
    pub fn scale_slot(&self) -> usize {
        (self.scale + 1) as usize
    }
}

impl fmt::Display for HaarIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.scale, self.location)
    }
}

/// One d-dimensional Haar coefficient: a Haar index per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoeffRef {
    indices: Vec<HaarIndex>,
}

impl CoeffRef {
    pub fn new(indices: Vec<HaarIndex>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[HaarIndex] {
        &self.indices
    }

    pub fn scales(&self) -> Vec<i32> {
        self.indices.iter().map(|h| h.scale).collect()
    }

    pub fn locations(&self) -> Vec<u64> {
        self.indices.iter().map(|h| h.location).collect()
    }

    /// Row in the Kronecker-power matrix (row-major across dimensions).
    pub fn row(&self, universe: &Universe) -> u64 {
        self.indices.iter().fold(0u64, |acc, h| (acc << universe.log2_delta()) | h.row())
    }

    pub fn from_row(row: u64, universe: &Universe) -> Self {
        let l = universe.log2_delta();
        let mask = universe.delta() - 1;
        let d = universe.dims();
        let indices = (0..d).map(|t| HaarIndex::from_row((row >> (l * (d - 1 - t) as u32)) & mask)).collect();
        Self { indices }
    }
}

impl fmt::Display for CoeffRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scales: Vec<String> = self.indices.iter().map(|h| h.scale.to_string()).collect();
        let locs: Vec<String> = self.indices.iter().map(|h| h.location.to_string()).collect();
        write!(f, "W^({})_({})", scales.join(","), locs.join(","))
    }
}

/// Nonzero Haar coefficients of an indicator vector, sorted by `CoeffRef`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseHaarVector {
    entries: Vec<(CoeffRef, f64)>,
}

impl SparseHaarVector {
    pub fn entries(&self) -> &[(CoeffRef, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CoeffRef) -> Option<f64> {
        self.entries.binary_search_by(|(k, _)| k.cmp(key)).ok().map(|i| self.entries[i].1)
    }

    /// Number of entries per scale vector.
    pub fn count_by_scale(&self) -> std::collections::BTreeMap<Vec<i32>, usize> {
        let mut out = std::collections::BTreeMap::new();
        for (k, _) in &self.entries {
            *out.entry(k.scales()).or_insert(0) += 1;
        }
        out
    }
}

/// `2^{-e/2}`, exact for even `e` and correctly rounded `√½·2^{-(e-1)/2}` for odd `e`.
pub(crate) fn inv_sqrt_pow2(e: u32) -> f64 {
    let half = (e / 2) as i32;
    let base = (-half as f64).exp2();
    if e.is_multiple_of(2) {
        base
    } else {
        base * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Sparse `H·1_[lo,hi)` in 1D as `(index, weight)` pairs sorted by index.
pub(crate) fn haar_range_1d(r: Range1D, log2_delta: u32) -> Vec<(HaarIndex, f64)> {
    let mut out = Vec::with_capacity(2 * log2_delta as usize + 2);
    out.push((HaarIndex::AVERAGE, r.len() as f64 * inv_sqrt_pow2(log2_delta)));
    for m in 0..log2_delta {
        let shift = log2_delta - m;
        let first = r.lo >> shift;
        let second = r.hi >> shift;
        let mut push = |j: u64| {
            if j >= (1u64 << m) {
                return;
            }
            let start = j << shift;
            let half = 1u64 << (shift - 1);
            let pos = r.overlap(start, start + half) as i64;
            let neg = r.overlap(start + half, start + 2 * half) as i64;
            let diff = pos - neg;
            if diff != 0 {
                out.push((HaarIndex { scale: m as i32, location: j }, diff as f64 * inv_sqrt_pow2(shift)));
            }
        };
        push(first);
        if second != first {
            push(second);
        }
    }
    out
}

/// Sparse Haar coefficients of the indicator of a 1D range.
pub fn haar_range_coeffs_1d(r: Range1D, universe: &Universe) -> Result<SparseHaarVector> {
    r.check(universe.log2_delta())?;
    let entries =
        haar_range_1d(r, universe.log2_delta()).into_iter().map(|(h, w)| (CoeffRef::new(vec![h]), w)).collect();
    Ok(SparseHaarVector { entries })
}

/// Sparse Haar coefficients of the indicator of a single 1D point; one per scale.
pub fn haar_point_coeffs_1d(i: u64, universe: &Universe) -> Result<SparseHaarVector> {
    if i >= universe.delta() {
        return Err(Error::IndexOutOfRange { index: i, delta: universe.delta() });
    }
    haar_range_coeffs_1d(Range1D { lo: i, hi: i + 1 }, universe)
}

/// Per-dimension sparse vectors of a box, each sorted by Haar index.
pub(crate) fn haar_factors(r: &RangeD, universe: &Universe) -> Result<Vec<Vec<(HaarIndex, f64)>>> {
    r.check(universe)?;
    Ok(r.axes().iter().map(|&a| haar_range_1d(a, universe.log2_delta())).collect())
}

/// Visits the Kronecker product of per-dimension sparse vectors in row-major
/// (= sorted `CoeffRef`) order, passing each combined index and weight.
pub(crate) fn kronecker_for_each<F>(factors: &[Vec<(HaarIndex, f64)>], mut visit: F)
where
    F: FnMut(&[HaarIndex], f64),
{
    let d = factors.len();
    if factors.iter().any(|f| f.is_empty()) {
        return;
    }
    let mut pos = vec![0usize; d];
    let mut idx: Vec<HaarIndex> = factors.iter().map(|f| f[0].0).collect();
    loop {
        let w = (0..d).map(|t| factors[t][pos[t]].1).product::<f64>();
        visit(&idx, w);
        // odometer, last dimension fastest
        let mut t = d;
        loop {
            if t == 0 {
                return;
            }
            t -= 1;
            pos[t] += 1;
            if pos[t] < factors[t].len() {
                idx[t] = factors[t][pos[t]].0;
                break;
            }
            pos[t] = 0;
            idx[t] = factors[t][0].0;
        }
    }
}

/// Sparse Haar coefficients of the indicator of a d-dimensional box.
pub fn haar_range_coeffs_dd(r: &RangeD, universe: &Universe) -> Result<SparseHaarVector> {
    let factors = haar_factors(r, universe)?;
    let mut entries = Vec::with_capacity(factors.iter().map(Vec::len).product());
    kronecker_for_each(&factors, |idx, w| entries.push((CoeffRef::new(idx.to_vec()), w)));
    Ok(SparseHaarVector { entries })
}

/// Sparse Haar coefficients of a single d-dimensional point.
pub fn haar_point_coeffs_dd(point: &[u64], universe: &Universe) -> Result<SparseHaarVector> {
    universe.check_point(point)?;
    haar_range_coeffs_dd(&RangeD::unit(point)?, universe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u1(l: u32) -> Universe {
        Universe::new(1, l).unwrap()
    }

    fn ranges(l: u32) -> impl Iterator<Item = Range1D> {
        let delta = 1u64 << l;
        (0..delta).flat_map(move |lo| ((lo + 1)..=delta).map(move |hi| Range1D { lo, hi }))
    }

    fn assert_entries(v: &SparseHaarVector, expected: &[((i32, u64), f64)]) {
        assert_eq!(v.len(), expected.len(), "{v:?}");
        for ((m, j), w) in expected {
            let key = CoeffRef::new(vec![HaarIndex { scale: *m, location: *j }]);
            let got = v.get(&key).unwrap_or_else(|| panic!("missing ({m},{j}) in {v:?}"));
            assert!((got - w).abs() < 1e-15, "({m},{j}): {got} vs {w}");
        }
    }

    #[test]
    fn universe_validation() {
        assert!(Universe::new(0, 3).is_err());
        assert!(Universe::new(1, 0).is_err());
        assert!(Universe::new(1, 63).is_err());
        let u = Universe::new(2, 4).unwrap();
        assert_eq!(u.delta(), 16);
        assert_eq!(u.cells(), Some(256));
        assert_eq!(u.range_coeff_bound(), 100);
        assert_eq!(Universe::new(2, 40).unwrap().cells(), None);
    }

    #[test]
    fn decompose_examples() {
        let u = u1(3);
        assert_eq!(decompose_dyadic_1d(Range1D { lo: 0, hi: 8 }, &u).unwrap(), vec![Dyadic::FULL]);
        let got: Vec<Range1D> =
            decompose_dyadic_1d(Range1D { lo: 1, hi: 7 }, &u).unwrap().iter().map(|d| d.range(3)).collect();
        let want = [(1, 2), (2, 4), (4, 6), (6, 7)].map(|(lo, hi)| Range1D { lo, hi });
        assert_eq!(got, want);
        assert_eq!(decompose_dyadic_1d(Range1D { lo: 3, hi: 4 }, &u).unwrap(), vec![Dyadic::leaf(3, 3)]);
    }

    #[test]
    fn decompose_rejects_bad_ranges() {
        let u = u1(3);
        assert!(decompose_dyadic_1d(Range1D { lo: 4, hi: 4 }, &u).is_err());
        assert!(decompose_dyadic_1d(Range1D { lo: 5, hi: 3 }, &u).is_err());
        assert!(decompose_dyadic_1d(Range1D { lo: 0, hi: 9 }, &u).is_err());
    }

    /// Minimum number of dyadic pieces covering a range, by dynamic programming
    /// over all dyadic intervals.
    fn min_dyadic_cover(r: Range1D, l: u32) -> usize {
        let n = (r.hi - r.lo) as usize;
        let mut best = vec![usize::MAX; n + 1];
        best[0] = 0;
        for end in 1..=n {
            let hi = r.lo + end as u64;
            for size_log in 0..=l {
                let size = 1u64 << size_log;
                if size as usize > end || !hi.is_multiple_of(size) {
                    continue;
                }
                let prev = best[end - size as usize];
                if prev != usize::MAX {
                    best[end] = best[end].min(prev + 1);
                }
            }
        }
        best[n]
    }

    #[test]
    fn decomposition_is_sound_and_minimal() {
        for l in 1..=6 {
            let u = u1(l);
            for r in ranges(l) {
                let pieces = decompose_dyadic_1d(r, &u).unwrap();
                assert!(pieces.len() <= 2 * l as usize);
                let mut cur = r.lo;
                for p in &pieces {
                    let pr = p.range(l);
                    assert_eq!(pr.lo, cur, "gap or overlap in {r}");
                    assert_eq!(pr.lo % pr.len(), 0);
                    cur = pr.hi;
                }
                assert_eq!(cur, r.hi);
                for w in pieces.windows(2) {
                    // two adjacent pieces never form a single dyadic interval
                    assert!(!(w[0].level == w[1].level && w[0].sibling() == Some(w[1])));
                }
                assert_eq!(pieces.len(), min_dyadic_cover(r, l), "{r}");
            }
        }
    }

    #[test]
    fn range_coefficient_examples() {
        let u = u1(2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_entries(&haar_range_coeffs_1d(Range1D { lo: 0, hi: 4 }, &u).unwrap(), &[((-1, 0), 2.0)]);
        assert_entries(
            &haar_range_coeffs_1d(Range1D { lo: 1, hi: 3 }, &u).unwrap(),
            &[((-1, 0), 1.0), ((1, 0), -s), ((1, 1), s)],
        );
        assert_entries(&haar_range_coeffs_1d(Range1D { lo: 0, hi: 2 }, &u).unwrap(), &[((-1, 0), 1.0), ((0, 0), 1.0)]);
    }

    #[test]
    fn point_coefficient_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = u1(2);
        assert_entries(&haar_point_coeffs_1d(0, &u).unwrap(), &[((-1, 0), 0.5), ((0, 0), 0.5), ((1, 0), s)]);
        assert_entries(&haar_point_coeffs_1d(3, &u).unwrap(), &[((-1, 0), 0.5), ((0, 0), -0.5), ((1, 1), -s)]);
        assert_entries(&haar_point_coeffs_1d(1, &u1(1)).unwrap(), &[((-1, 0), s), ((0, 0), -s)]);
        assert!(haar_point_coeffs_1d(4, &u).is_err());
    }

    #[test]
    fn kronecker_examples() {
        let u = Universe::new(2, 2).unwrap();
        let full = haar_range_coeffs_dd(&RangeD::full(&u), &u).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full.entries()[0].0.scales(), vec![-1, -1]);
        assert!((full.entries()[0].1 - 4.0).abs() < 1e-15);

        let p = haar_point_coeffs_dd(&[0, 0], &u).unwrap();
        assert_eq!(p.len(), 9);
        let p1 = haar_point_coeffs_1d(0, &u1(2)).unwrap();
        for (k, w) in p.entries() {
            let a = p1.get(&CoeffRef::new(vec![k.indices()[0]])).unwrap();
            let b = p1.get(&CoeffRef::new(vec![k.indices()[1]])).unwrap();
            assert_eq!(*w, a * b);
        }

        let r: RangeD = "1:3,0:2".parse().unwrap();
        let v = haar_range_coeffs_dd(&r, &u).unwrap();
        assert_eq!(v.len(), 6);
        let keys: Vec<_> = v.entries().iter().map(|(k, _)| k.clone()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn per_scale_and_total_bounds() {
        for l in 1..=6 {
            let u = u1(l);
            for r in ranges(l) {
                let v = haar_range_coeffs_1d(r, &u).unwrap();
                assert!(v.len() <= 2 * l as usize + 2);
                assert!(v.count_by_scale().values().all(|&c| c <= 2));
                assert!(v.entries().iter().all(|(_, w)| *w != 0.0));
            }
            for i in 0..u.delta() {
                let v = haar_point_coeffs_1d(i, &u).unwrap();
                assert_eq!(v.len(), l as usize + 1);
                assert!(v.count_by_scale().values().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn wavelets_sum_to_zero_over_support() {
        for l in 1..=6 {
            let u = u1(l);
            for m in 0..l {
                for j in 0..(1u64 << m) {
                    let support = Dyadic { level: m, index: j }.range(l);
                    let v = haar_range_coeffs_1d(support, &u).unwrap();
                    let key = CoeffRef::new(vec![HaarIndex { scale: m as i32, location: j }]);
                    assert_eq!(v.get(&key), None);
                }
            }
        }
    }

    #[test]
    fn rows_round_trip() {
        let u = Universe::new(3, 3).unwrap();
        for row in 0..u.cells().unwrap() {
            assert_eq!(CoeffRef::from_row(row, &u).row(&u), row);
        }
        assert_eq!(HaarIndex::from_row(5), HaarIndex { scale: 2, location: 1 });
    }

    #[test]
    fn parse_ranges() {
        let r: RangeD = "1:3, 0:2".parse().unwrap();
        assert_eq!(r.to_string(), "[1,3)x[0,2)");
        assert!("1-3".parse::<RangeD>().is_err());
        assert!("3:3".parse::<RangeD>().is_err());
        assert!("a:3".parse::<RangeD>().is_err());
    }

    #[test]
    fn dyadic_navigation() {
        let d = Dyadic { level: 3, index: 6 };
        assert_eq!(d.range(3), Range1D { lo: 6, hi: 7 });
        assert_eq!(d.parent(), Some(Dyadic { level: 2, index: 3 }));
        assert_eq!(d.sibling(), Some(Dyadic { level: 3, index: 7 }));
        assert_eq!(Dyadic::FULL.parent(), None);
        assert_eq!(Dyadic::FULL.heap_index(), 1);
        assert_eq!(d.heap_index(), 14);
        assert!(Dyadic::new(2, 4, 3).is_err());
    }
}
