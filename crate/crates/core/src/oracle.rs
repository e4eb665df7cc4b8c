//! Brute-force ground truth.
//!
//! Nothing here calls the sparse coefficient code, the simulation trees or
//! the samplers: the dense Haar matrix and its row ordering are rebuilt from
//! the definition, sums are plain loops, and exact tables use rational
//! arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::randomness::CoeffSource;
use crate::universe::{HaarIndex, RangeD, Universe};

/// Default limit on `Δ^d` for dense oracles.
pub const DEFAULT_ORACLE_CAP: u64 = 4096;

/// Default absolute tolerance for numeric integration.
pub const DEFAULT_QUAD_TOL: f64 = 1e-9;

fn cells_within(u: &Universe, cap: u64) -> Result<usize> {
    match u.cells() {
        Some(n) if n <= cap => Ok(n as usize),
        n => Err(Error::OracleTooLarge { size: n.unwrap_or(u64::MAX), cap }),
    }
}

/// Scale and location of 1D Haar row `r`: row 0 is the average, row `2^m + j` is `(m, j)`.
fn row_to_scale_location(r: u64) -> (i32, u64) {
    if r == 0 {
        (-1, 0)
    } else {
        let m = 63 - r.leading_zeros();
        (m as i32, r - (1u64 << m))
    }
}

/// `H[r][i]` for the 1D Haar matrix of size `Δ = 2^L`.
pub fn haar_entry_1d(r: u64, i: u64, log2_delta: u32) -> f64 {
    let delta = (1u64 << log2_delta) as f64;
    let (m, j) = row_to_scale_location(r);
    if m < 0 {
        return 1.0 / delta.sqrt();
    }
    let width = 1u64 << (log2_delta - m as u32);
    let start = j * width;
    let height = ((1u64 << m) as f64 / delta).sqrt();
    if i < start || i >= start + width {
        0.0
    } else if i < start + width / 2 {
        height
    } else {
        -height
    }
}

/// Splits a row-major flat index into `d` base-`Δ` digits, first axis most significant.
fn digits(mut flat: u64, u: &Universe) -> Vec<u64> {
    let mut out = vec![0; u.dims()];
    for t in (0..u.dims()).rev() {
        out[t] = flat % u.delta();
        flat /= u.delta();
    }
    out
}

/// `M[r][c]` of the d-fold Kronecker power, rows and columns flattened row-major.
pub fn haar_entry(u: &Universe, row: u64, col: u64) -> f64 {
    digits(row, u).into_iter().zip(digits(col, u)).map(|(r, i)| haar_entry_1d(r, i, u.log2_delta())).product()
}

/// The Haar index tuple of flattened row `row`.
pub fn row_indices(u: &Universe, row: u64) -> Vec<HaarIndex> {
    digits(row, u)
        .into_iter()
        .map(|r| {
            let (scale, location) = row_to_scale_location(r);
            HaarIndex { scale, location }
        })
        .collect()
}

/// The dense `Δ^d × Δ^d` matrix `M`.
pub fn dense_haar_matrix(u: &Universe, cap: u64) -> Result<Vec<Vec<f64>>> {
    let n = cells_within(u, cap)? as u64;
    Ok((0..n).map(|r| (0..n).map(|c| haar_entry(u, r, c)).collect()).collect())
}

/// `max |M·Mᵀ - I|`.
pub fn orthonormality_error(u: &Universe, cap: u64) -> Result<f64> {
    let m = dense_haar_matrix(u, cap)?;
    let n = m.len();
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let dot: f64 = m[a].iter().zip(&m[b]).map(|(x, y)| x * y).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    Ok(worst)
}

/// Every coefficient and every leaf of one realization, materialized.
#[derive(Debug, Clone)]
pub struct DenseRealization {
    universe: Universe,
    w: Vec<f64>,
    x: Vec<f64>,
}

impl DenseRealization {
    /// `x = Mᵀw` for an explicit coefficient vector in row order.
    pub fn from_coefficients(u: Universe, w: Vec<f64>, cap: u64) -> Result<Self> {
        let n = cells_within(&u, cap)?;
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.len() });
        }
        let x = (0..n as u64).map(|c| (0..n as u64).map(|r| haar_entry(&u, r, c) * w[r as usize]).sum()).collect();
        Ok(Self { universe: u, w, x })
    }

    /// Inverse transform of the coefficients `src` assigns to every row.
    pub fn from_source(src: &CoeffSource, cap: u64) -> Result<Self> {
        let u = *src.universe();
        let n = cells_within(&u, cap)? as u64;
        let w = (0..n).map(|r| src.coeff_value(&row_indices(&u, r))).collect::<Result<Vec<_>>>()?;
        Self::from_coefficients(u, w, cap)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.w
    }

    pub fn leaves(&self) -> &[f64] {
        &self.x
    }

    pub fn leaf(&self, point: &[u64]) -> Result<f64> {
        self.universe.check_point(point)?;
        let flat = point.iter().fold(0u64, |acc, &i| acc * self.universe.delta() + i);
        Ok(self.x[flat as usize])
    }

    /// Plain summation of the leaves inside `r`.
    pub fn brute_range_sum(&self, r: &RangeD) -> Result<f64> {
        r.check(&self.universe)?;
        let mut total = 0.0;
        for (flat, &v) in self.x.iter().enumerate() {
            if r.contains(&digits(flat as u64, &self.universe)) {
                total += v;
            }
        }
        Ok(total)
    }
}

/// Exact probabilities from the 2×2 Rademacher universe.
#[derive(Debug, Clone, PartialEq)]
pub struct RademacherCounterexample {
    /// `Pr(S^V_0 = 0 | S = 0)`.
    pub p_uncond: BigRational,
    /// `Pr(S^V_0 = 0 | S^H_0 = 2, S^H_1 = -2, S = 0)`.
    pub p_cond: BigRational,
    /// `Pr(S = 0)`.
    pub p_total_zero: BigRational,
}

impl RademacherCounterexample {
    /// Conditioning on the strips changes the law of `S^V_0`, so strip sums
    /// are not conditionally independent given the total.
    pub fn independence_violated(&self) -> bool {
        self.p_uncond != self.p_cond
    }
}

/// Enumerates all 16 sign patterns `X[i][j]`; `S^H_i` sums row `i`, `S^V_j` sums column `j`.
pub fn rademacher_2x2_conditional() -> RademacherCounterexample {
    let (mut total_zero, mut v0_and_zero, mut strips, mut v0_and_strips) = (0i64, 0i64, 0i64, 0i64);
    for mask in 0u32..16 {
        let x = |i: u32, j: u32| if mask >> (2 * i + j) & 1 == 1 { 1i64 } else { -1 };
        let s = x(0, 0) + x(0, 1) + x(1, 0) + x(1, 1);
        let h0 = x(0, 0) + x(0, 1);
        let h1 = x(1, 0) + x(1, 1);
        let v0 = x(0, 0) + x(1, 0);
        if s == 0 {
            total_zero += 1;
            v0_and_zero += (v0 == 0) as i64;
            if h0 == 2 && h1 == -2 {
                strips += 1;
                v0_and_strips += (v0 == 0) as i64;
            }
        }
    }
    let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    RademacherCounterexample {
        p_uncond: r(v0_and_zero, total_zero),
        p_cond: r(v0_and_strips, strips),
        p_total_zero: r(total_zero, 16),
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_DEPTH: u32 = 50;
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)?
                + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)?,
        )
    }
    // Start from four panels so symmetric integrands cannot fool the first test.
    let quarter = |lo: f64, hi: f64| -> Option<f64> {
        let (flo, fhi) = (f(lo), f(hi));
        let (mm, fmm, w) = simpson(f, lo, flo, hi, fhi);
        recurse(f, lo, flo, hi, fhi, mm, fmm, w, tol / 4.0, MAX_DEPTH)
    };
    let pts = [a, a + 0.25 * (b - a), 0.5 * (a + b), a + 0.75 * (b - a), b];
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += quarter(w[0], w[1]).ok_or(Error::Quadrature { tol, estimate: total })?;
    }
    Ok(total)
}

/// Density of the lower-half sum of a Cauchy node of `2n` leaves with sum `z`:
/// `n(4n²+z²) / (2π(n²+x²)(n²+(z-x)²))`.
pub fn cauchy_conditional_density(x: f64, z: f64, n: f64) -> f64 {
    n * (4.0 * n * n + z * z) / (2.0 * std::f64::consts::PI * (n * n + x * x) * (n * n + (z - x) * (z - x)))
}

/// `∫ g(tan θ) sec²θ dθ` over the image of `[lo, hi]` (infinite ends allowed).
fn integrate_real_line<G: Fn(f64) -> f64>(g: &G, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let h = |t: f64| {
        let c = t.cos();
        if c == 0.0 {
            0.0
        } else {
            g(t.tan()) / (c * c)
        }
    };
    adaptive_simpson(&h, lo.atan(), hi.atan(), tol)
}

/// `g(0|z) = ∫ f(x|z)·f(-x|-z) dx` at `n = 1`, numerically and in closed form
/// `(20+z²) / (4π(4+z²))`.
pub fn cauchy_g0(z: f64, tol: f64) -> Result<(f64, f64)> {
    if !z.is_finite() {
        return Err(Error::InvalidState(format!("z = {z} is not finite")));
    }
    let g = |x: f64| cauchy_conditional_density(x, z, 1.0) * cauchy_conditional_density(-x, -z, 1.0);
    let numeric = integrate_real_line(&g, f64::NEG_INFINITY, f64::INFINITY, tol)?;
    let closed = (20.0 + z * z) / (4.0 * std::f64::consts::PI * (4.0 + z * z));
    Ok((numeric, closed))
}

/// Numeric CDF of the Cauchy split law evaluated at every point of `sorted`
/// (ascending), integrating piecewise between consecutive points.
pub fn cauchy_conditional_cdf_sorted(sorted: &[f64], z: f64, n: f64, tol: f64) -> Result<Vec<f64>> {
    let g = |x: f64| cauchy_conditional_density(x, z, n);
    let total = integrate_real_line(&g, f64::NEG_INFINITY, f64::INFINITY, tol)?;
    let mut out = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    let mut prev = f64::NEG_INFINITY;
    let piece_tol = tol / (sorted.len() as f64 + 1.0);
    for &x in sorted {
        if x < prev {
            return Err(Error::InvalidState("CDF points must be sorted".into()));
        }
        if x > prev {
            acc += integrate_real_line(&g, prev, x, piece_tol)?;
        }
        out.push((acc / total).clamp(0.0, 1.0));
        prev = x;
    }
    Ok(out)
}

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn normalize(weights: Vec<(i64, BigRational)>) -> Result<Vec<(i64, BigRational)>> {
    let total: BigRational = weights.iter().map(|(_, w)| w.clone()).sum();
    if total.is_zero() {
        return Err(Error::InvalidState("conditional law has empty support".into()));
    }
    Ok(weights.into_iter().filter(|(_, w)| !w.is_zero()).map(|(x, w)| (x, w / total.clone())).collect())
}

/// Discrete targets for which the split law can be tabulated exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteTarget {
    /// Poisson with rate 1; the rate cancels from the conditional law.
    Poisson,
    Rademacher,
}

/// One-node pmf `φ_n(x)` up to a factor independent of `x`.
fn phi(target: DiscreteTarget, n: u64, x: i64) -> BigRational {
    match target {
        DiscreteTarget::Poisson => {
            if x < 0 {
                return BigRational::zero();
            }
            BigRational::new(BigInt::from(n).pow(x as u32), factorial(x as u64))
        }
        DiscreteTarget::Rademacher => {
            let n_i = n as i64;
            if x.abs() > n_i || (n_i + x) % 2 != 0 {
                return BigRational::zero();
            }
            let pos = ((n_i + x) / 2) as u64;
            BigRational::new(factorial(n) / (factorial(pos) * factorial(n - pos)), BigInt::one() << n as usize)
        }
    }
}

/// Normalized `φ_n(x)·φ_n(z-x)` over all `x`: the law of the lower half of a
/// node with `2n` leaves and sum `z`.
pub fn eq1_pmf(target: DiscreteTarget, z: i64, n: u64) -> Result<Vec<(i64, BigRational)>> {
    let (lo, hi) = match target {
        DiscreteTarget::Poisson => {
            if z < 0 {
                return Err(Error::InvalidState(format!("Poisson sum {z} is negative")));
            }
            (0, z)
        }
        DiscreteTarget::Rademacher => (-(n as i64), n as i64),
    };
    if (hi - lo) > 10_000 {
        return Err(Error::OracleTooLarge { size: (hi - lo) as u64, cap: 10_000 });
    }
    normalize((lo..=hi).map(|x| (x, phi(target, n, x) * phi(target, n, z - x))).collect())
}

/// Normalized `1 / (x!(s_h-x)!(s_v-x)!(s_g-s_h-s_v+x)!)`.
pub fn four_way_f_table(s_h: u64, s_v: u64, s_g: u64) -> Result<Vec<(u64, BigRational)>> {
    let mut weights = Vec::new();
    for x in 0..=s_h.min(s_v) {
        let rest = (s_g + x) as i64 - (s_h + s_v) as i64;
        if rest < 0 {
            continue;
        }
        let denom = factorial(x) * factorial(s_h - x) * factorial(s_v - x) * factorial(rest as u64);
        weights.push((x as i64, BigRational::new(BigInt::one(), denom)));
    }
    Ok(normalize(weights)?.into_iter().map(|(x, p)| (x as u64, p)).collect())
}

/// Multinomial(s, uniform over `bins`) probability of `counts`.
pub fn multinomial_uniform_pmf(counts: &[u64]) -> BigRational {
    let s: u64 = counts.iter().sum();
    let num = factorial(s);
    let den =
        counts.iter().fold(BigInt::one(), |acc, &c| acc * factorial(c)) * BigInt::from(counts.len()).pow(s as u32);
    BigRational::new(num, den)
}
