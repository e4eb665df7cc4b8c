//! Gaussian range sums in d dimensions.
//!
//! The leaves are the virtual vector `x = Mᵀw`, where `M` is the d-fold
//! Kronecker power of the Haar matrix and `w` holds i.i.d. standard Gaussian
//! coefficients. Because `M` is orthonormal, `x` is i.i.d. Gaussian too, and
//! `⟨x, 1_R⟩ = ⟨w, M·1_R⟩` needs only the `O((2L+2)^d)` nonzero entries of
//! `M·1_R`.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::randomness::{CoeffSource, MasterSeed, Mode};
use crate::universe::{haar_factors, kronecker_for_each, CoeffRef, HaarIndex, RangeD, Universe};

/// Neumaier's compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Range-summable standard Gaussian variables over `[0, Δ)^d`.
#[derive(Debug, Clone)]
pub struct GaussianErs {
    src: CoeffSource,
}

impl GaussianErs {
    pub fn new(universe: Universe, mode: Mode, seed: MasterSeed) -> Result<Self> {
        Ok(Self { src: CoeffSource::new(universe, mode, seed)? })
    }

    pub fn from_source(src: CoeffSource) -> Self {
        Self { src }
    }

    pub fn universe(&self) -> &Universe {
        self.src.universe()
    }

    pub fn source(&self) -> &CoeffSource {
        &self.src
    }

    /// The coefficient `W` at `c`.
    pub fn coefficient(&self, c: &CoeffRef) -> Result<f64> {
        self.src.coeff_value(c.indices())
    }

    pub fn range_sum(&self, r: &RangeD) -> Result<f64> {
        Ok(self.range_sum_counted(r)?.0)
    }

    /// Range sum together with the number of coefficient evaluations it took.
    pub fn range_sum_counted(&self, r: &RangeD) -> Result<(f64, u64)> {
        let factors = haar_factors(r, self.universe())?;
        let mut acc = CompensatedSum::default();
        let mut evals = 0u64;
        let mut failure = None;
        kronecker_for_each(&factors, |idx, weight| {
            if failure.is_some() {
                return;
            }
            match self.src.coeff_value(idx) {
                Ok(w) => {
                    evals += 1;
                    acc.add(weight * w);
                }
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok((acc.value(), evals)),
        }
    }

    /// Coefficient evaluations a query on `r` performs.
    pub fn hash_evals_for(&self, r: &RangeD) -> Result<u64> {
        Ok(self.range_sum_counted(r)?.1)
    }

    /// Coefficient evaluations per scale vector for a query on `r`.
    pub fn hash_evals_by_scale(&self, r: &RangeD) -> Result<BTreeMap<Vec<i32>, u64>> {
        let factors = haar_factors(r, self.universe())?;
        let mut out = BTreeMap::new();
        kronecker_for_each(&factors, |idx: &[HaarIndex], _| {
            *out.entry(idx.iter().map(|h| h.scale).collect()).or_insert(0) += 1;
        });
        Ok(out)
    }

    pub fn point_value(&self, point: &[u64]) -> Result<f64> {
        self.universe().check_point(point)?;
        self.range_sum(&RangeD::unit(point)?)
    }
}
