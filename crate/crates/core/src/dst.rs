//! One-dimensional dyadic simulation trees.
//!
//! The root holds the sum of all `Δ` underlying variables. A node of `2n`
//! leaves with sum `z` is split by drawing the lower half from the conditional
//! law `f(x|z) = φ_n(x)·φ_n(z-x) / φ_{2n}(z)`; the upper half is `z - x`.
//! Every draw comes from a PRF stream keyed by the node being split, so a
//! node's value never depends on which queries came first.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::randomness::{bits_to_unit, Domain, MasterSeed, Prf};
use crate::sampling;
use crate::universe::{decompose_dyadic_1d, Dyadic, Range1D, Universe};

/// Proposal cap for the Cauchy split sampler. Acceptance is at least 1/2 per
/// proposal, so hitting this means the stream or the inputs are broken.
pub const CAUCHY_MAX_ITERS: u32 = 10_000;

/// Conditional split law for one target distribution.
pub trait SplitKernel {
    type Value: Copy + PartialEq + fmt::Debug + fmt::Display + Add<Output = Self::Value> + Sub<Output = Self::Value>;

    fn name(&self) -> &'static str;

    /// Sum of `delta` i.i.d. copies of the target.
    fn root(&self, delta: u64, rng: &mut ChaCha20Rng) -> Result<Self::Value>;

    /// Lower-half sum of a node with `2n` leaves and sum `z`.
    fn split_lower(&self, z: Self::Value, n: u64, rng: &mut ChaCha20Rng) -> Result<Self::Value>;
}

/// Discrete kernels can state their split law exactly.
pub trait ExactSplitLaw: SplitKernel {
    /// `(value, probability)` pairs of the lower-half sum, in increasing value order.
    fn split_pmf(&self, z: Self::Value, n: u64) -> Result<Vec<(Self::Value, BigRational)>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianKernel;

impl SplitKernel for GaussianKernel {
    type Value = f64;

    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn root(&self, delta: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
        Ok((delta as f64).sqrt() * sampling::standard_normal(rng))
    }

    fn split_lower(&self, z: f64, n: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
        Ok(z / 2.0 + (n as f64 / 2.0).sqrt() * sampling::standard_normal(rng))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoissonKernel {
    lambda: f64,
}

impl PoissonKernel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Unsupported(format!("Poisson rate must be positive and finite, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl SplitKernel for PoissonKernel {
    type Value = u64;

    fn name(&self) -> &'static str {
        "poisson"
    }

    fn root(&self, delta: u64, rng: &mut ChaCha20Rng) -> Result<u64> {
        sampling::poisson(self.lambda * delta as f64, rng)
    }

    fn split_lower(&self, z: u64, _n: u64, rng: &mut ChaCha20Rng) -> Result<u64> {
        sampling::binomial_half(z, rng)
    }
}

impl ExactSplitLaw for PoissonKernel {
    fn split_pmf(&self, z: u64, _n: u64) -> Result<Vec<(u64, BigRational)>> {
        let denom = BigInt::one() << z as usize;
        Ok((0..=z).map(|x| (x, BigRational::new(binom(z, x), denom.clone()))).collect())
    }
}

/// Leaves take values `±1` with probability ½ each.
#[derive(Debug, Clone, Copy, Default)]
pub struct RademacherKernel;

impl RademacherKernel {
    /// Number of `+1` leaves among `2n` leaves summing to `z`.
    fn positives(z: i64, n: u64) -> Result<u64> {
        let size = 2 * n as i128;
        let z = z as i128;
        if z.abs() > size || (size + z) % 2 != 0 {
            return Err(Error::InvalidState(format!("sum {z} is not reachable by {size} signs")));
        }
        Ok(((size + z) / 2) as u64)
    }
}

impl SplitKernel for RademacherKernel {
    type Value = i64;

    fn name(&self) -> &'static str {
        "rademacher"
    }

    fn root(&self, delta: u64, rng: &mut ChaCha20Rng) -> Result<i64> {
        let pos = sampling::binomial_half(delta, rng)?;
        Ok(2 * pos as i64 - delta as i64)
    }

    fn split_lower(&self, z: i64, n: u64, rng: &mut ChaCha20Rng) -> Result<i64> {
        let k = sampling::hypergeometric(2 * n, Self::positives(z, n)?, n, rng)?;
        Ok(2 * k as i64 - n as i64)
    }
}

impl ExactSplitLaw for RademacherKernel {
    fn split_pmf(&self, z: i64, n: u64) -> Result<Vec<(i64, BigRational)>> {
        let big_k = Self::positives(z, n)?;
        let total = binom(2 * n, n);
        let lo = big_k.saturating_sub(n);
        let hi = big_k.min(n);
        Ok((lo..=hi)
            .map(|k| {
                let p = BigRational::new(binom(big_k, k) * binom(2 * n - big_k, n - k), total.clone());
                (2 * k as i64 - n as i64, p)
            })
            .collect())
    }
}

/// Standard Cauchy leaves; a node of `n` leaves is Cauchy(0, n).
#[derive(Debug, Clone, Copy, Default)]
pub struct CauchyKernel;

impl CauchyKernel {
    /// Acceptance probability of proposal `x` against the equal mixture of
    /// Cauchy(0, n) and Cauchy(z, n). The ratio of target to mixture is at
    /// most 2, attained at `x = z/2`, so this never exceeds 1.
    pub fn acceptance(x: f64, z: f64, n: f64) -> f64 {
        (4.0 * n * n + z * z) / (2.0 * (2.0 * n * n + x * x + (z - x) * (z - x)))
    }
}

impl SplitKernel for CauchyKernel {
    type Value = f64;

    fn name(&self) -> &'static str {
        "cauchy"
    }

    fn root(&self, delta: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
        Ok(sampling::cauchy(0.0, delta as f64, rng))
    }

    fn split_lower(&self, z: f64, n: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidState(format!("Cauchy node sum {z} is not finite")));
        }
        let n = n as f64;
        for _ in 0..CAUCHY_MAX_ITERS {
            let center = if rng.next_u64() >> 63 == 0 { 0.0 } else { z };
            let x = sampling::cauchy(center, n, rng);
            if bits_to_unit(rng.next_u64()) < Self::acceptance(x, z, n) {
                return Ok(x);
            }
        }
        Err(Error::SamplerExhausted(CAUCHY_MAX_ITERS))
    }
}

pub(crate) fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// PRF stream id for the root draw. Splits use the split node's heap index (≥ 1).
const ROOT_STREAM: u64 = 0;

/// A lazily realized 1D dyadic simulation tree.
///
/// Queries take `&mut self` because realized nodes are memoized; the memo is
/// write-once, so a given seed yields one fixed realization.
#[derive(Debug, Clone)]
pub struct Dst1d<K: SplitKernel> {
    universe: Universe,
    kernel: K,
    prf: Prf,
    memo: HashMap<Dyadic, K::Value>,
}

impl<K: SplitKernel> Dst1d<K> {
    pub fn new(log2_delta: u32, kernel: K, seed: &MasterSeed) -> Result<Self> {
        Ok(Self {
            universe: Universe::new(1, log2_delta)?,
            kernel,
            prf: Prf::new(seed, Domain::Dst1d),
            memo: HashMap::new(),
        })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// Number of realized (memoized) nodes.
    pub fn realized(&self) -> usize {
        self.memo.len()
    }

    pub fn root_sample(&mut self) -> Result<K::Value> {
        self.dyadic_sum(Dyadic::FULL)
    }

    /// Splits `node` (of `2n` leaves, sum `z`) into its two children's sums.
    /// Pure in its arguments: the draw comes from `node`'s own stream.
    pub fn split(&self, z: K::Value, n: u64, node: Dyadic) -> Result<(K::Value, K::Value)> {
        let mut rng = self.prf.stream(node.heap_index(), 0);
        let lower = self.kernel.split_lower(z, n, &mut rng)?;
        Ok((lower, z - lower))
    }

    pub fn dyadic_sum(&mut self, node: Dyadic) -> Result<K::Value> {
        if node.level > self.universe.log2_delta() {
            return Err(Error::InvalidRange(format!("dyadic level {} below the leaves", node.level)));
        }
        if let Some(&v) = self.memo.get(&node) {
            return Ok(v);
        }
        let v = match node.parent() {
            None => {
                let mut rng = self.prf.stream(ROOT_STREAM, 0);
                self.kernel.root(self.universe.delta(), &mut rng)?
            }
            Some(parent) => {
                let z = self.dyadic_sum(parent)?;
                let (lo, hi) = parent.children();
                let (zl, zu) = self.split(z, lo.len(self.universe.log2_delta()), parent)?;
                self.memo.insert(lo, zl);
                self.memo.insert(hi, zu);
                if node == lo {
                    zl
                } else {
                    zu
                }
            }
        };
        self.memo.insert(node, v);
        Ok(v)
    }

    pub fn range_sum_1d(&mut self, r: Range1D) -> Result<K::Value> {
        let pieces = decompose_dyadic_1d(r, &self.universe)?;
        let mut acc = self.dyadic_sum(pieces[0])?;
        for &p in &pieces[1..] {
            acc = acc + self.dyadic_sum(p)?;
        }
        Ok(acc)
    }

    pub fn leaf(&mut self, i: u64) -> Result<K::Value> {
        if i >= self.universe.delta() {
            return Err(Error::IndexOutOfRange { index: i, delta: self.universe.delta() });
        }
        self.dyadic_sum(Dyadic::leaf(i, self.universe.log2_delta()))
    }

    /// Realized nodes whose two children are both realized.
    pub fn realized_splits(&self) -> impl Iterator<Item = (K::Value, K::Value, K::Value)> + '_ {
        self.memo.iter().filter_map(|(node, &v)| {
            if node.level >= self.universe.log2_delta() {
                return None;
            }
            let (a, b) = node.children();
            Some((v, *self.memo.get(&a)?, *self.memo.get(&b)?))
        })
    }
}

impl Dst1d<GaussianKernel> {
    /// The standard normal behind the root: root = `√Δ · root_normal`.
    pub fn root_normal(&self) -> f64 {
        sampling::standard_normal(&mut self.prf.stream(ROOT_STREAM, 0))
    }

    /// The fresh standard normal used to split `node`.
    pub fn split_normal(&self, node: Dyadic) -> f64 {
        sampling::standard_normal(&mut self.prf.stream(node.heap_index(), 0))
    }
}

/// Target distributions available at runtime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetDist {
    Gaussian,
    Poisson { lambda: f64 },
    Cauchy,
    Rademacher,
}

impl fmt::Display for TargetDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetDist::Gaussian => f.write_str("gaussian"),
            TargetDist::Poisson { lambda } => write!(f, "poisson(lambda={lambda})"),
            TargetDist::Cauchy => f.write_str("cauchy"),
            TargetDist::Rademacher => f.write_str("rademacher"),
        }
    }
}

impl FromStr for TargetDist {
    type Err = Error;

    /// Poisson parses with the default rate 1.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(TargetDist::Gaussian),
            "poisson" => Ok(TargetDist::Poisson { lambda: 1.0 }),
            "cauchy" => Ok(TargetDist::Cauchy),
            "rademacher" => Ok(TargetDist::Rademacher),
            other => Err(Error::Unsupported(format!("unknown distribution '{other}'"))),
        }
    }
}

/// A realized range sum of any supported distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistValue {
    Real(f64),
    Count(u64),
    Signed(i64),
}

impl DistValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            DistValue::Real(v) => v,
            DistValue::Count(v) => v as f64,
            DistValue::Signed(v) => v as f64,
        }
    }
}

impl fmt::Display for DistValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistValue::Real(v) => write!(f, "{v}"),
            DistValue::Count(v) => write!(f, "{v}"),
            DistValue::Signed(v) => write!(f, "{v}"),
        }
    }
}

/// Runtime-dispatched DST.
#[derive(Debug, Clone)]
pub enum AnyDst {
    Gaussian(Dst1d<GaussianKernel>),
    Poisson(Dst1d<PoissonKernel>),
    Cauchy(Dst1d<CauchyKernel>),
    Rademacher(Dst1d<RademacherKernel>),
}

impl AnyDst {
    pub fn new(dist: TargetDist, log2_delta: u32, seed: &MasterSeed) -> Result<Self> {
        Ok(match dist {
            TargetDist::Gaussian => AnyDst::Gaussian(Dst1d::new(log2_delta, GaussianKernel, seed)?),
            TargetDist::Poisson { lambda } => {
                AnyDst::Poisson(Dst1d::new(log2_delta, PoissonKernel::new(lambda)?, seed)?)
            }
            TargetDist::Cauchy => AnyDst::Cauchy(Dst1d::new(log2_delta, CauchyKernel, seed)?),
            TargetDist::Rademacher => AnyDst::Rademacher(Dst1d::new(log2_delta, RademacherKernel, seed)?),
        })
    }

    pub fn range_sum(&mut self, r: Range1D) -> Result<DistValue> {
        Ok(match self {
            AnyDst::Gaussian(t) => DistValue::Real(t.range_sum_1d(r)?),
            AnyDst::Cauchy(t) => DistValue::Real(t.range_sum_1d(r)?),
            AnyDst::Poisson(t) => DistValue::Count(t.range_sum_1d(r)?),
            AnyDst::Rademacher(t) => DistValue::Signed(t.range_sum_1d(r)?),
        })
    }

    pub fn realized(&self) -> usize {
        match self {
            AnyDst::Gaussian(t) => t.realized(),
            AnyDst::Cauchy(t) => t.realized(),
            AnyDst::Poisson(t) => t.realized(),
            AnyDst::Rademacher(t) => t.realized(),
        }
    }
}
