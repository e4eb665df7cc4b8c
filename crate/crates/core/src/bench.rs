//! Timing and hash-evaluation counts of Gaussian range queries across universe sizes.

use std::time::Instant;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::gaussian::GaussianErs;
use crate::randomness::{MasterSeed, Mode};
use crate::universe::{Range1D, RangeD, Universe};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub log2_delta: u32,
    pub delta: u64,
    pub dims: usize,
    pub queries: usize,
    pub mean_ns: f64,
    pub mean_evals: f64,
    pub max_evals: u64,
    /// `(2L+2)^d`.
    pub bound: u64,
}

impl BenchRow {
    pub fn within_bound(&self) -> bool {
        self.max_evals <= self.bound
    }
}

/// Ranges whose endpoints are odd and fall in opposite halves on every axis,
/// so nearly every scale contributes two coefficients.
pub fn near_worst_ranges(u: &Universe, count: usize, seed: &MasterSeed) -> Vec<RangeD> {
    let mut rng = ChaCha20Rng::from_seed(*seed.derive(u64::from(u.log2_delta()) << 8 | u.dims() as u64).as_bytes());
    let delta = u.delta();
    let axis = |rng: &mut ChaCha20Rng| {
        if delta <= 2 {
            return Range1D { lo: 0, hi: delta };
        }
        let half = delta / 2;
        // lo odd in [1, half), hi odd in (half, delta)
        let lo = 1 + 2 * (rng.next_u64() % (half / 2));
        let hi = half + 1 + 2 * (rng.next_u64() % (half / 2));
        Range1D { lo, hi }
    };
    (0..count)
        .map(|_| RangeD::from_axes((0..u.dims()).map(|_| axis(&mut rng)).collect()).expect("nonempty axes"))
        .collect()
}

pub fn bench_gaussian(dims: usize, log2_delta: u32, mode: Mode, seed: &MasterSeed, queries: usize) -> Result<BenchRow> {
    if queries == 0 {
        return Err(Error::Unsupported("bench needs at least one query".into()));
    }
    let u = Universe::new(dims, log2_delta)?;
    let g = GaussianErs::new(u, mode, *seed)?;
    let ranges = near_worst_ranges(&u, queries, seed);
    let mut evals = Vec::with_capacity(queries);
    let start = Instant::now();
    let mut sink = 0.0;
    for r in &ranges {
        let (v, n) = g.range_sum_counted(r)?;
        sink += v;
        evals.push(n);
    }
    let elapsed = start.elapsed();
    std::hint::black_box(sink);
    Ok(BenchRow {
        log2_delta,
        delta: u.delta(),
        dims,
        queries,
        mean_ns: elapsed.as_nanos() as f64 / queries as f64,
        mean_evals: evals.iter().sum::<u64>() as f64 / queries as f64,
        max_evals: evals.iter().copied().max().unwrap_or(0),
        bound: (2 * log2_delta as u64 + 2).pow(dims as u32),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(L, mean_evals^(1/d))`. Counts growing like
/// `L^d` give a straight line with slope about 2 (two coefficients per scale
/// per axis) and `r_squared` near 1.
pub fn per_axis_fit(rows: &[BenchRow]) -> Option<LinearFit> {
    let pts: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.log2_delta as f64, r.mean_evals.powf(1.0 / r.dims as f64))).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_worst_ranges_are_valid_and_deterministic() {
        let u = Universe::new(2, 6).unwrap();
        let s = MasterSeed::from_u64(3);
        let a = near_worst_ranges(&u, 50, &s);
        assert_eq!(a, near_worst_ranges(&u, 50, &s));
        for r in &a {
            r.check(&u).unwrap();
            for ax in r.axes() {
                assert!(ax.lo % 2 == 1 && ax.hi % 2 == 1 && ax.lo < 32 && ax.hi > 32);
            }
        }
        let tiny = Universe::new(1, 1).unwrap();
        assert_eq!(near_worst_ranges(&tiny, 1, &s)[0], RangeD::full(&tiny));
    }

    #[test]
    fn counts_respect_the_bound_and_grow_like_l_to_the_d() {
        for d in 1..=2 {
            // below L=3 the near-worst ranges degenerate to a few fixed shapes
            let rows: Vec<BenchRow> = (3..=10)
                .map(|l| bench_gaussian(d, l, Mode::default(), &MasterSeed::from_u64(1), 20).unwrap())
                .collect();
            assert!(rows.iter().all(BenchRow::within_bound));
            let fit = per_axis_fit(&rows).unwrap();
            assert!(fit.r_squared > 0.99 && (1.8..=2.1).contains(&fit.slope), "d={d} {fit:?}");
        }
    }

    #[test]
    fn zero_queries_rejected() {
        assert!(bench_gaussian(1, 4, Mode::default(), &MasterSeed::from_u64(1), 0).is_err());
    }
}
