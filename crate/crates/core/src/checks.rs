//! Acceptance criteria as runnable checks.
//!
//! Shared by the `verify` and `stats` commands and the acceptance test target.
//! Every criterion returns one line per sub-check. An error inside a criterion
//! is reported as a failing line instead of aborting the run.

use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::dst::{CauchyKernel, Dst1d, ExactSplitLaw, GaussianKernel, PoissonKernel, RademacherKernel, SplitKernel};
use crate::error::{Error, Result};
use crate::gaussian::GaussianErs;
use crate::oracle::{
    cauchy_conditional_cdf_sorted, cauchy_g0, dense_haar_matrix, eq1_pmf, four_way_f_table, multinomial_uniform_pmf,
    orthonormality_error, rademacher_2x2_conditional, DenseRealization, DiscreteTarget, DEFAULT_ORACLE_CAP,
    DEFAULT_QUAD_TOL,
};
use crate::poisson2d::{four_way_split_pmf, PoissonErs2D, NODE_BOUND_FACTOR};
use crate::randomness::{CoeffSource, KWiseHash, MasterSeed, Mode, MERSENNE_61};
use crate::sketch::{ExactCounter, Sketch, Update};
use crate::stats::{
    cauchy_cdf, chi_square_gof, chi_square_independence, chi_square_report, ks_test, ks_test_from_cdf, pearson,
    standard_normal_cdf, Moments, TestReport,
};
use crate::universe::{
    haar_factors, haar_point_coeffs_dd, haar_range_coeffs_dd, kronecker_for_each, CoeffRef, HaarIndex, Range1D, RangeD,
    Universe,
};

pub const DEFAULT_CHECK_SEED: u64 = 0x5eed;

/// Criterion ids and titles, in order.
pub const CRITERIA: [(u8, &str); 9] = [
    (1, "Gaussian oracle equivalence"),
    (2, "Coefficient bounds"),
    (3, "Orthonormality"),
    (4, "Split kernels vs the conditional law"),
    (5, "Poisson 2D framework"),
    (6, "Exact negative cases"),
    (7, "Complexity instrumentation"),
    (8, "Statistical suite"),
    (9, "Sketch application"),
];

/// Criteria run by `verify`; `stats` runs the rest.
pub const VERIFY_CRITERIA: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 9];
pub const STATS_CRITERIA: [u8; 1] = [8];

/// Pinned configuration of the golden sketch fixture.
pub const GOLDEN_SEED: u64 = 0x5eed;
pub const GOLDEN_DIMS: usize = 2;
pub const GOLDEN_LOG2_DELTA: u32 = 4;
pub const GOLDEN_STREAM: &str = include_str!("../fixtures/golden_stream.txt");
pub const GOLDEN_ESTIMATES: &str = include_str!("../fixtures/golden_estimates.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_report(r: &TestReport) -> Self {
        Self::new(
            r.name.clone(),
            r.passed,
            format!("statistic={:.6} crit1%={:.6} p={:.4}", r.statistic, r.crit_1pct, r.p_value),
        )
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub lines: Vec<CheckLine>,
    pub elapsed: Duration,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        !self.lines.is_empty() && self.lines.iter().all(|l| l.passed)
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failed = self.lines.iter().filter(|l| !l.passed).count();
        write!(
            f,
            "criterion {} ({}): {} [{} checks, {} failed, {:.1}s]",
            self.id,
            self.title,
            if self.passed() { "PASS" } else { "FAIL" },
            self.lines.len(),
            failed,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub seed: MasterSeed,
    pub oracle_cap: u64,
    pub quad_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: MasterSeed::from_u64(DEFAULT_CHECK_SEED),
            oracle_cap: DEFAULT_ORACLE_CAP,
            quad_tol: DEFAULT_QUAD_TOL,
        }
    }
}

impl CheckConfig {
    fn child(&self, criterion: u64, k: u64) -> MasterSeed {
        self.seed.derive(criterion << 40 | k)
    }

    fn rng(&self, criterion: u64, k: u64) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(*self.child(criterion, k | 1 << 39).as_bytes())
    }
}

fn time_limit(id: u8) -> Option<Duration> {
    match id {
        1 => Some(Duration::from_secs(60)),
        6 => Some(Duration::from_secs(10)),
        8 => Some(Duration::from_secs(300)),
        _ => None,
    }
}

pub fn run_criterion(id: u8, cfg: &CheckConfig) -> Result<CriterionReport> {
    let title = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Unsupported(format!("no criterion {id}; valid ids are 1..=9")))?;
    let start = Instant::now();
    let body = match id {
        1 => oracle_equivalence(cfg),
        2 => coefficient_bounds(cfg),
        3 => orthonormality(cfg),
        4 => split_kernels(cfg),
        5 => poisson_framework(cfg),
        6 => negative_cases(cfg),
        7 => complexity(cfg),
        8 => statistical_suite(cfg),
        _ => sketch_application(cfg),
    };
    let mut lines = body.unwrap_or_else(|e| vec![CheckLine::new("error", false, e.to_string())]);
    let elapsed = start.elapsed();
    if let Some(limit) = time_limit(id) {
        lines.push(CheckLine::new(
            "runtime",
            elapsed < limit,
            format!("{:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()),
        ));
    }
    Ok(CriterionReport { id, title, lines, elapsed })
}

fn below<R: RngCore>(rng: &mut R, n: u64) -> u64 {
    rng.next_u64() % n
}

/// A uniformly random nonempty interval of `[0, delta)`.
pub fn random_interval<R: RngCore>(delta: u64, rng: &mut R) -> Range1D {
    loop {
        let a = below(rng, delta + 1);
        let b = below(rng, delta + 1);
        if a != b {
            return Range1D { lo: a.min(b), hi: a.max(b) };
        }
    }
}

pub fn random_range<R: RngCore>(u: &Universe, rng: &mut R) -> RangeD {
    let axes = (0..u.dims()).map(|_| random_interval(u.delta(), rng)).collect();
    RangeD::from_axes(axes).expect("nonempty axes")
}

fn random_point<R: RngCore>(u: &Universe, rng: &mut R) -> Vec<u64> {
    (0..u.dims()).map(|_| below(rng, u.delta())).collect()
}

/// Calls `f` on every nonempty box of `u`.
pub fn for_each_range<F: FnMut(&RangeD) -> Result<()>>(u: &Universe, mut f: F) -> Result<()> {
    let delta = u.delta();
    let intervals: Vec<Range1D> =
        (0..delta).flat_map(|lo| (lo + 1..=delta).map(move |hi| Range1D { lo, hi })).collect();
    let d = u.dims();
    let mut pos = vec![0usize; d];
    loop {
        f(&RangeD::from_axes(pos.iter().map(|&p| intervals[p]).collect())?)?;
        let mut t = d;
        loop {
            if t == 0 {
                return Ok(());
            }
            t -= 1;
            pos[t] += 1;
            if pos[t] < intervals.len() {
                break;
            }
            pos[t] = 0;
        }
    }
}

fn for_each_point<F: FnMut(&[u64]) -> Result<()>>(u: &Universe, mut f: F) -> Result<()> {
    let cells = u.cells().ok_or(Error::OracleTooLarge { size: u64::MAX, cap: u64::MAX })?;
    let mut p = vec![0u64; u.dims()];
    for flat in 0..cells {
        let mut rest = flat;
        for t in (0..u.dims()).rev() {
            p[t] = rest % u.delta();
            rest /= u.delta();
        }
        f(&p)?;
    }
    Ok(())
}

fn choose(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

fn nonzero<T>(table: Vec<(T, BigRational)>) -> Vec<(T, BigRational)> {
    table.into_iter().filter(|(_, p)| !p.is_zero()).collect()
}

fn to_f64(p: &BigRational) -> f64 {
    p.to_f64().unwrap_or(f64::NAN)
}

fn oracle_equivalence(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    const TOL: f64 = 1e-10;
    let cases = [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 3), (2, 4), (3, 2), (3, 3)];
    let mut lines = Vec::new();
    for (mi, mode) in [Mode::KWise { k: 4 }, Mode::TrulyRandomProxy].into_iter().enumerate() {
        for (ci, &(d, l)) in cases.iter().enumerate() {
            let u = Universe::new(d, l)?;
            let k = (mi * 100 + ci) as u64;
            let g = GaussianErs::new(u, mode, cfg.child(1, k))?;
            let dense = DenseRealization::from_source(g.source(), cfg.oracle_cap)?;
            let (mut worst, mut n) = (0f64, 0u64);
            let mut cmp = |r: &RangeD| -> Result<()> {
                let fast = g.range_sum(r)?;
                let slow = dense.brute_range_sum(r)?;
                worst = worst.max((fast - slow).abs() / slow.abs().max(1.0));
                n += 1;
                Ok(())
            };
            if u.delta() <= 8 {
                for_each_range(&u, &mut cmp)?;
            } else {
                let mut rng = cfg.rng(1, k);
                for _ in 0..1000 {
                    cmp(&random_range(&u, &mut rng))?;
                }
            }
            lines.push(CheckLine::new(
                format!("{mode} d={d} delta={}", u.delta()),
                worst <= TOL,
                format!("max relative error {worst:.2e} over {n} ranges (tol {TOL:e})"),
            ));
        }
    }
    Ok(lines)
}

fn coefficient_bounds(_cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for d in 1..=2usize {
        for l in 1..=6u32 {
            let u = Universe::new(d, l)?;
            let slots_per_dim = (l + 1) as usize;
            let total_bound = (2 * l as u64 + 2).pow(d as u32);
            let scale_bound = 1u64 << d;
            let mut counts = vec![0u64; slots_per_dim.pow(d as u32)];
            let (mut max_total, mut max_scale, mut n) = (0u64, 0u64, 0u64);
            for_each_range(&u, |r| {
                let factors = haar_factors(r, &u)?;
                counts.iter_mut().for_each(|c| *c = 0);
                let mut total = 0u64;
                kronecker_for_each(&factors, |idx: &[HaarIndex], _| {
                    let slot = idx.iter().fold(0usize, |acc, h| acc * slots_per_dim + h.scale_slot());
                    counts[slot] += 1;
                    total += 1;
                });
                max_total = max_total.max(total);
                max_scale = max_scale.max(counts.iter().copied().max().unwrap_or(0));
                n += 1;
                Ok(())
            })?;
            lines.push(CheckLine::new(
                format!("ranges d={d} delta={}", u.delta()),
                max_total <= total_bound && max_scale <= scale_bound,
                format!(
                    "max total {max_total} (bound {total_bound}), max per scale {max_scale} (bound {scale_bound}) over {n} ranges"
                ),
            ));

            let want = slots_per_dim.pow(d as u32);
            let mut bad = 0u64;
            for_each_point(&u, |p| {
                let v = haar_point_coeffs_dd(p, &u)?;
                let by_scale = v.count_by_scale();
                if v.len() != want || by_scale.len() != want || by_scale.values().any(|&c| c != 1) {
                    bad += 1;
                }
                Ok(())
            })?;
            lines.push(CheckLine::new(
                format!("points d={d} delta={}", u.delta()),
                bad == 0,
                format!("{bad} points without exactly one coefficient per scale ({want} expected)"),
            ));
        }
    }

    // The sparse vectors carry the right values, not just the right counts.
    for (d, l) in [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 3)] {
        let u = Universe::new(d, l)?;
        let m = dense_haar_matrix(&u, DEFAULT_ORACLE_CAP)?;
        let cells = m.len();
        let mut worst = 0f64;
        let mut cells_in = vec![false; cells];
        for_each_range(&u, |r| {
            let mut flat = 0usize;
            for_each_point(&u, |p| {
                cells_in[flat] = r.contains(p);
                flat += 1;
                Ok(())
            })?;
            let sparse = haar_range_coeffs_dd(r, &u)?;
            for (row, mrow) in m.iter().enumerate() {
                let dense: f64 = mrow.iter().zip(&cells_in).filter(|(_, &inside)| inside).map(|(v, _)| v).sum();
                let got = sparse.get(&CoeffRef::from_row(row as u64, &u)).unwrap_or(0.0);
                worst = worst.max((dense - got).abs());
            }
            Ok(())
        })?;
        lines.push(CheckLine::new(
            format!("sparse = dense M·1_R d={d} delta={}", u.delta()),
            worst < 1e-12,
            format!("max abs difference {worst:.2e}"),
        ));
    }
    Ok(lines)
}

fn orthonormality(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for d in 1..=2usize {
        for l in 1..=4u32 {
            let u = Universe::new(d, l)?;
            let err = orthonormality_error(&u, cfg.oracle_cap)?;
            lines.push(CheckLine::new(
                format!("|MMᵀ - I|max d={d} delta={}", u.delta()),
                err < 1e-12,
                format!("{err:.2e} (tol 1e-12)"),
            ));
        }
    }
    Ok(lines)
}

fn split_kernels(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();

    let poisson = PoissonKernel::new(1.0)?;
    let mut bad = Vec::new();
    for z in 0..=12u64 {
        let denom = BigInt::one() << z as usize;
        let binomial: Vec<(u64, BigRational)> =
            (0..=z).map(|x| (x, BigRational::new(choose(z, x), denom.clone()))).collect();
        for n in [1u64, 2, 4, 8] {
            let kernel = nonzero(poisson.split_pmf(z, n)?);
            let eq1: Vec<(u64, BigRational)> =
                eq1_pmf(DiscreteTarget::Poisson, z as i64, n)?.into_iter().map(|(x, p)| (x as u64, p)).collect();
            if kernel != binomial || eq1 != binomial {
                bad.push(format!("z={z} n={n}"));
            }
        }
    }
    lines.push(CheckLine::new(
        "poisson kernel pmf = Binomial(z, 1/2), z <= 12",
        bad.is_empty(),
        format!("{} mismatching tables {:?}", bad.len(), bad),
    ));

    let mut bad = Vec::new();
    for n in 1..=6u64 {
        for z in (-(2 * n as i64)..=2 * n as i64).step_by(2) {
            if nonzero(RademacherKernel.split_pmf(z, n)?) != eq1_pmf(DiscreteTarget::Rademacher, z, n)? {
                bad.push(format!("z={z} n={n}"));
            }
        }
    }
    lines.push(CheckLine::new(
        "rademacher kernel pmf = normalized conditional table, 2n <= 12",
        bad.is_empty(),
        format!("{} mismatching tables {:?}", bad.len(), bad),
    ));

    // Sampled frequencies against the exact tables.
    const DRAWS: usize = 1_000_000;
    {
        let (z, n) = (12u64, 4u64);
        let mut rng = cfg.rng(4, 1);
        let mut obs = vec![0u64; z as usize + 1];
        for _ in 0..DRAWS {
            obs[poisson.split_lower(z, n, &mut rng)? as usize] += 1;
        }
        let probs: Vec<f64> = poisson.split_pmf(z, n)?.iter().map(|(_, p)| to_f64(p)).collect();
        lines.push(CheckLine::from_report(&chi_square_gof("poisson kernel draws z=12 n=4 (10^6)", &obs, &probs)?));
    }
    {
        let (z, n) = (2i64, 6u64);
        let mut rng = cfg.rng(4, 2);
        let table = RademacherKernel.split_pmf(z, n)?;
        let index: HashMap<i64, usize> = table.iter().enumerate().map(|(i, (x, _))| (*x, i)).collect();
        let mut obs = vec![0u64; table.len()];
        for _ in 0..DRAWS {
            let x = RademacherKernel.split_lower(z, n, &mut rng)?;
            let i = *index.get(&x).ok_or_else(|| Error::Internal(format!("draw {x} outside the support")))?;
            obs[i] += 1;
        }
        let probs: Vec<f64> = table.iter().map(|(_, p)| to_f64(p)).collect();
        lines.push(CheckLine::from_report(&chi_square_gof("rademacher kernel draws z=2 n=6 (10^6)", &obs, &probs)?));
    }

    for (i, (z, n)) in [(3.0f64, 4u64), (-2.5, 1)].into_iter().enumerate() {
        let mut rng = cfg.rng(4, 10 + i as u64);
        let xs = (0..DRAWS).map(|_| GaussianKernel.split_lower(z, n, &mut rng)).collect::<Result<Vec<_>>>()?;
        let m = Moments::of(&xs)?;
        let var = n as f64 / 2.0;
        let z_mean = (m.mean - z / 2.0) / (var / DRAWS as f64).sqrt();
        let z_var = (m.variance - var) / (var * (2.0 / (DRAWS as f64 - 1.0)).sqrt());
        lines.push(CheckLine::new(
            format!("gaussian kernel mean/variance z={z} n={n} (10^6)"),
            z_mean.abs() <= 3.0 && z_var.abs() <= 3.0,
            format!(
                "mean {:.5} (want {}), variance {:.5} (want {var}); z-scores {z_mean:.2}, {z_var:.2} (limit 3)",
                m.mean,
                z / 2.0,
                m.variance
            ),
        ));
    }

    for (i, z) in [0.0f64, 1.0, 4.0].into_iter().enumerate() {
        let mut rng = cfg.rng(4, 20 + i as u64);
        let mut xs = (0..5000).map(|_| CauchyKernel.split_lower(z, 1, &mut rng)).collect::<Result<Vec<_>>>()?;
        xs.sort_by(f64::total_cmp);
        let cdf = cauchy_conditional_cdf_sorted(&xs, z, 1.0, cfg.quad_tol)?;
        let name = format!("cauchy kernel KS z={z} n=1 (5000 draws)");
        lines.push(CheckLine::from_report(&ks_test_from_cdf(&name, &cdf)?));
    }
    Ok(lines)
}

fn hypergeometric_pmf(s_g: u64, s_v: u64, s_h: u64) -> Vec<(u64, BigRational)> {
    let total = choose(s_g, s_h);
    nonzero(
        (0..=s_h.min(s_v))
            .map(|x| {
                let ways =
                    choose(s_v, x) * if s_h - x <= s_g - s_v { choose(s_g - s_v, s_h - x) } else { BigInt::zero() };
                (x, BigRational::new(ways, total.clone()))
            })
            .collect(),
    )
}

/// All ways to put `s` indistinguishable balls into `bins` bins.
fn compositions(s: u64, bins: usize) -> Vec<Vec<u64>> {
    if bins == 1 {
        return vec![vec![s]];
    }
    (0..=s)
        .flat_map(|first| {
            compositions(s - first, bins - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn grid_sum(grid: &[u64], delta: u64, r: &RangeD) -> u64 {
    let (a, b) = (r.axes()[0], r.axes()[1]);
    (a.lo..a.hi).flat_map(|i| (b.lo..b.hi).map(move |j| (i * delta + j) as usize)).map(|k| grid[k]).sum()
}

fn poisson_framework(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();

    let mut violations = 0u64;
    for (i, (l, lambda)) in [(1u32, 1.0f64), (3, 1.0), (4, 2.5), (6, 0.5)].into_iter().enumerate() {
        let mut p = PoissonErs2D::new(l, lambda, &cfg.child(5, i as u64))?;
        let mut rng = cfg.rng(5, i as u64);
        for _ in 0..100 {
            p.range_sum_2d(&random_range(p.universe(), &mut rng))?;
        }
        violations += p.check_conservation().is_err() as u64;
        let root = p.range_sum_2d(&RangeD::full(p.universe()))?;
        let grid = p.materialize(cfg.oracle_cap.max(4096))?;
        violations += p.check_conservation().is_err() as u64;
        violations += (grid.iter().sum::<u64>() != root) as u64;
    }
    let mut small = 0u64;
    for s in 0..10_000u64 {
        let mut p = PoissonErs2D::new(1, 1.0, &cfg.child(5, 1000 + s))?;
        let grid = p.materialize(4)?;
        small += (grid.iter().sum::<u64>() != p.range_sum_2d(&RangeD::full(p.universe()))?) as u64;
    }
    lines.push(CheckLine::new(
        "conservation at every realized node",
        violations == 0 && small == 0,
        format!("{violations} violations at delta in {{2,8,16,64}}; {small} of 10^4 delta=2 seeds with leaves != root"),
    ));

    let seed = cfg.child(5, 50);
    let grid = PoissonErs2D::new(3, 1.0, &seed)?.materialize(64)?;
    let mut fresh = PoissonErs2D::new(3, 1.0, &seed)?;
    let mut rng = cfg.rng(5, 50);
    let mut mismatches = 0u64;
    for _ in 0..200 {
        let r = random_range(fresh.universe(), &mut rng);
        mismatches += (fresh.range_sum_2d(&r)? != grid_sum(&grid, 8, &r)) as u64;
    }
    lines.push(CheckLine::new(
        "range sums = materialized grid, delta=8, 200 ranges",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    ));

    let mut bad = Vec::new();
    for s_g in 0..=12u64 {
        for s_h in 0..=s_g {
            for s_v in 0..=s_g {
                let want = hypergeometric_pmf(s_g, s_v, s_h);
                if nonzero(four_way_split_pmf(s_h, s_v, s_g)?) != want || four_way_f_table(s_h, s_v, s_g)? != want {
                    bad.push((s_h, s_v, s_g));
                }
            }
        }
    }
    lines.push(CheckLine::new(
        "4-way split pmf = Hypergeometric(s_g, s_v, s_h), s_g <= 12",
        bad.is_empty(),
        format!("{} mismatching (s_h, s_v, s_g) {:?}", bad.len(), bad),
    ));

    // Conditioned on the total, the 16 leaves of a 4×4 grid are Multinomial(s, uniform).
    const S: u64 = 3;
    const SEEDS: u64 = 100_000;
    let outcomes = compositions(S, 16);
    let index: HashMap<Vec<u64>, usize> = outcomes.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
    let mut obs = vec![0u64; outcomes.len()];
    for s in 0..SEEDS {
        let grid = PoissonErs2D::with_root(2, S, &cfg.child(5, 10_000 + s))?.materialize(16)?;
        obs[*index.get(&grid).ok_or_else(|| Error::Internal(format!("leaves {grid:?} do not sum to {S}")))?] += 1;
    }
    let probs: Vec<f64> = outcomes.iter().map(|c| to_f64(&multinomial_uniform_pmf(c))).collect();
    lines.push(CheckLine::from_report(&chi_square_gof(
        "leaves | root=3, delta=4 vs Multinomial(3, uniform) (10^5 seeds)",
        &obs,
        &probs,
    )?));
    Ok(lines)
}

fn negative_cases(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let r = rademacher_2x2_conditional();
    let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    lines.push(CheckLine::new(
        "rademacher 2x2 conditional probabilities",
        r.p_uncond == q(2, 3) && r.p_cond == q(1, 1) && r.p_total_zero == q(6, 16) && r.independence_violated(),
        format!("p_uncond={} p_cond={} Pr(S=0)={} (want 2/3, 1, 3/8)", r.p_uncond, r.p_cond, r.p_total_zero),
    ));
    for z in [0.0f64, 1.0, 2.0] {
        let (numeric, closed) = cauchy_g0(z, cfg.quad_tol)?;
        let want = (20.0 + z * z) / (4.0 * std::f64::consts::PI * (4.0 + z * z));
        let err = (numeric - want).abs();
        lines.push(CheckLine::new(
            format!("cauchy g(0|z) at z={z}"),
            err <= 1e-6 && (closed - want).abs() <= 1e-15,
            format!("numeric {numeric:.10}, closed form {want:.10}, |diff| {err:.2e} (tol 1e-6)"),
        ));
    }
    Ok(lines)
}

fn complexity(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for d in 1..=2usize {
        for l in 1..=5u32 {
            let u = Universe::new(d, l)?;
            let g = GaussianErs::new(u, Mode::default(), cfg.child(7, (d * 10) as u64 + l as u64))?;
            let bound = (2 * l as u64 + 2).pow(d as u32);
            let (mut worst, mut mismatched, mut n) = (0u64, 0u64, 0u64);
            for_each_range(&u, |r| {
                let evals = g.hash_evals_for(r)?;
                worst = worst.max(evals);
                if l <= 4 {
                    mismatched += (evals != haar_range_coeffs_dd(r, &u)?.len() as u64) as u64;
                }
                n += 1;
                Ok(())
            })?;
            let per_point = ((l + 1) as u64).pow(d as u32);
            let mut bad_points = 0u64;
            for_each_point(&u, |p| {
                bad_points += (g.hash_evals_for(&RangeD::unit(p)?)? != per_point) as u64;
                Ok(())
            })?;
            lines.push(CheckLine::new(
                format!("gaussian evals exhaustive d={d} delta={}", u.delta()),
                worst <= bound && mismatched == 0 && bad_points == 0,
                format!(
                    "max {worst} (bound {bound}) over {n} ranges; {mismatched} counts != sparse size; {bad_points} points != {per_point}"
                ),
            ));
        }
    }

    for d in 1..=3usize {
        let u = Universe::new(d, 20)?;
        let g = GaussianErs::new(u, Mode::default(), cfg.child(7, 100 + d as u64))?;
        let bound = 42u64.pow(d as u32);
        let mut rng = cfg.rng(7, 100 + d as u64);
        let mut worst = 0u64;
        for _ in 0..10_000 {
            worst = worst.max(g.hash_evals_for(&random_range(&u, &mut rng))?);
        }
        let half = u.delta() / 2;
        let adversarial = RangeD::new(&vec![1; d], &vec![half + 1; d])?;
        let adv = g.hash_evals_for(&adversarial)?;
        lines.push(CheckLine::new(
            format!("gaussian evals random d={d} L=20"),
            worst <= bound && adv <= bound,
            format!("max {worst} over 10^4 random ranges, {adv} on [1, delta/2+1)^d (bound {bound})"),
        ));
    }

    for l in 1..=6u32 {
        let bound = NODE_BOUND_FACTOR * (2 * l as u64 + 2).pow(2);
        let seed = cfg.child(7, 200 + l as u64);
        let u = Universe::new(2, l)?;
        let (mut worst, mut n) = (0usize, 0u64);
        let mut probe = |r: &RangeD| -> Result<()> {
            let mut p = PoissonErs2D::new(l, 1.0, &seed)?;
            p.range_sum_2d(r)?;
            worst = worst.max(p.realized());
            n += 1;
            Ok(())
        };
        if l <= 3 {
            for_each_range(&u, &mut probe)?;
        } else {
            let mut rng = cfg.rng(7, 200 + l as u64);
            for _ in 0..1000 {
                probe(&random_range(&u, &mut rng))?;
            }
        }
        lines.push(CheckLine::new(
            format!("poisson realized nodes delta={}", u.delta()),
            worst as u64 <= bound,
            format!("max {worst} over {n} fresh queries (bound {NODE_BOUND_FACTOR}·(2L+2)² = {bound})"),
        ));
    }
    Ok(lines)
}

fn poisson_probs(lambda: f64, bins: usize) -> Vec<f64> {
    let mut probs = Vec::with_capacity(bins + 1);
    let mut p = (-lambda).exp();
    for k in 0..bins {
        probs.push(p);
        p *= lambda / (k + 1) as f64;
    }
    let head: f64 = probs.iter().sum();
    probs.push((1.0 - head).max(0.0));
    probs
}

fn poisson_gof(name: &str, leaves: &[u64], lambda: f64) -> Result<TestReport> {
    const BINS: usize = 12;
    let mut obs = vec![0u64; BINS + 1];
    for &v in leaves {
        obs[(v as usize).min(BINS)] += 1;
    }
    chi_square_gof(name, &obs, &poisson_probs(lambda, BINS))
}

/// Chi-square statistic of a table of counts against uniform cells.
fn uniform_chi_square(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}

fn statistical_suite(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    const N: u64 = 100_000;

    for (i, mode) in [Mode::TrulyRandomProxy, Mode::KWise { k: 4 }].into_iter().enumerate() {
        let g = GaussianErs::new(Universe::new(1, 17)?, mode, cfg.child(8, i as u64))?;
        let xs = (0..N).map(|p| g.point_value(&[p])).collect::<Result<Vec<_>>>()?;
        let name = format!("gaussian ERS leaves KS, {mode} (10^5)");
        lines.push(CheckLine::from_report(&ks_test(&name, &xs, standard_normal_cdf)?));
    }
    {
        let u = Universe::new(1, 17)?;
        let src = CoeffSource::new(u, Mode::KWise { k: 4 }, cfg.child(8, 2))?;
        let xs =
            (0..N).map(|row| src.coeff_value(CoeffRef::from_row(row, &u).indices())).collect::<Result<Vec<_>>>()?;
        lines.push(CheckLine::from_report(&ks_test(
            "coefficients KS, kwise(k=4) (10^5 refs)",
            &xs,
            standard_normal_cdf,
        )?));
    }

    {
        let mut t = Dst1d::new(14, GaussianKernel, &cfg.child(8, 3))?;
        let xs = (0..1u64 << 14).map(|i| t.leaf(i)).collect::<Result<Vec<_>>>()?;
        lines.push(CheckLine::from_report(&ks_test("gaussian DST leaves KS (16384)", &xs, standard_normal_cdf)?));
        let mut t = Dst1d::new(12, CauchyKernel, &cfg.child(8, 4))?;
        let xs = (0..1u64 << 12).map(|i| t.leaf(i)).collect::<Result<Vec<_>>>()?;
        lines.push(CheckLine::from_report(&ks_test("cauchy DST leaves KS (4096)", &xs, |x| cauchy_cdf(x, 0.0, 1.0))?));
        let mut t = Dst1d::new(14, RademacherKernel, &cfg.child(8, 5))?;
        let mut obs = [0u64; 2];
        for i in 0..1u64 << 14 {
            match t.leaf(i)? {
                -1 => obs[0] += 1,
                1 => obs[1] += 1,
                v => return Err(Error::Internal(format!("rademacher leaf {v}"))),
            }
        }
        lines.push(CheckLine::from_report(&chi_square_gof("rademacher DST leaves (16384)", &obs, &[0.5, 0.5])?));
    }

    {
        let mut t = Dst1d::new(16, PoissonKernel::new(1.0)?, &cfg.child(8, 6))?;
        let leaves = (0..1u64 << 16).map(|i| t.leaf(i)).collect::<Result<Vec<_>>>()?;
        lines.push(CheckLine::from_report(&poisson_gof("poisson DST leaves vs Poisson(1) (65536)", &leaves, 1.0)?));
        let grid = PoissonErs2D::new(8, 1.0, &cfg.child(8, 7))?.materialize(1 << 16)?;
        lines.push(CheckLine::from_report(&poisson_gof("poisson 2D leaves vs Poisson(1) (65536)", &grid, 1.0)?));
    }

    // For each random leaf pair, the correlation across realizations. Under
    // independence (S-1)·r² is close to chi-square(1) per pair.
    for (i, (d, l)) in [(1usize, 12u32), (2, 6)].into_iter().enumerate() {
        const PAIRS: usize = 1000;
        const REALIZATIONS: usize = 1000;
        let u = Universe::new(d, l)?;
        let mut rng = cfg.rng(8, 10 + i as u64);
        let pairs: Vec<(Vec<u64>, Vec<u64>)> = (0..PAIRS)
            .map(|_| loop {
                let (a, b) = (random_point(&u, &mut rng), random_point(&u, &mut rng));
                if a != b {
                    break (a, b);
                }
            })
            .collect();
        let mut xa = vec![vec![0.0; REALIZATIONS]; PAIRS];
        let mut xb = vec![vec![0.0; REALIZATIONS]; PAIRS];
        for s in 0..REALIZATIONS {
            let g = GaussianErs::new(u, Mode::KWise { k: 4 }, cfg.child(8, 1000 * (i as u64 + 1) + s as u64))?;
            for (k, (a, b)) in pairs.iter().enumerate() {
                xa[k][s] = g.point_value(a)?;
                xb[k][s] = g.point_value(b)?;
            }
        }
        let rs = (0..PAIRS).map(|k| pearson(&xa[k], &xb[k])).collect::<Result<Vec<_>>>()?;
        let mean_r = rs.iter().sum::<f64>() / PAIRS as f64;
        lines.push(CheckLine::new(
            format!("mean leaf-pair correlation d={d} delta={}", u.delta()),
            mean_r.abs() < 0.02,
            format!("{mean_r:.5} over {PAIRS} pairs x {REALIZATIONS} realizations (limit 0.02)"),
        ));
        let stat: f64 = rs.iter().map(|r| (REALIZATIONS as f64 - 1.0) * r * r).sum();
        let name = format!("leaf-pair correlations jointly null d={d} delta={}", u.delta());
        lines.push(CheckLine::from_report(&chi_square_report(&name, stat, PAIRS)?));
    }

    // Given S = s, row 0 and column 0 of a 2×2 Poisson grid are independent.
    {
        let mut tables: Vec<Vec<Vec<u64>>> = (0..=6).map(|s| vec![vec![0u64; s + 1]; s + 1]).collect();
        for seed in 0..N {
            let g = PoissonErs2D::new(1, 1.0, &cfg.child(8, 100_000 + seed))?.materialize(4)?;
            let s = g.iter().sum::<u64>() as usize;
            if (1..=6).contains(&s) {
                tables[s][(g[0] + g[1]) as usize][(g[0] + g[2]) as usize] += 1;
            }
        }
        for (s, table) in tables.iter().enumerate().skip(1) {
            let name = format!("delta=2 row/column independence given S={s}");
            lines.push(CheckLine::from_report(&chi_square_independence(&name, table)?));
        }
    }

    // Joint law of pairs of 4-wise hash outputs over random hash draws.
    {
        const DRAWS: usize = 100_000;
        const CELLS: u64 = 4;
        let mut rng = cfg.rng(8, 20);
        let mut tables = vec![vec![0u64; (CELLS * CELLS) as usize]; 120];
        for _ in 0..DRAWS {
            let h = KWiseHash::random(4, &mut rng)?;
            let bins: Vec<u64> = (0..16u64).map(|key| h.eval(key) * CELLS / MERSENNE_61).collect();
            let mut t = 0;
            for a in 0..16 {
                for b in a + 1..16 {
                    tables[t][(bins[a] * CELLS + bins[b]) as usize] += 1;
                    t += 1;
                }
            }
        }
        let stats: Vec<f64> = tables.iter().map(|t| uniform_chi_square(t)).collect();
        // Disjoint key pairs (0,1), (2,3), ... are mutually pairwise independent.
        let mut disjoint = 0.0;
        let mut t = 0;
        for a in 0..16 {
            for b in a + 1..16 {
                if a % 2 == 0 && b == a + 1 {
                    disjoint += stats[t];
                }
                t += 1;
            }
        }
        let df = (CELLS * CELLS - 1) as usize;
        lines.push(CheckLine::from_report(&chi_square_report(
            "kwise(k=4) disjoint key pairs, summed",
            disjoint,
            8 * df,
        )?));
        let worst = stats.iter().copied().fold(0.0, f64::max);
        let per_pair = statrs::distribution::ChiSquared::new(df as f64).map_err(|e| Error::Internal(e.to_string()))?;
        let crit = statrs::distribution::ContinuousCDF::inverse_cdf(&per_pair, 1.0 - 0.01 / 120.0);
        lines.push(CheckLine::new(
            "kwise(k=4) all 120 key pairs, Bonferroni 1%",
            worst <= crit,
            format!("max statistic {worst:.3}, critical {crit:.3}"),
        ));
    }

    // Pairwise independence surrogate: k=2, four leaves, many seeds.
    {
        let u = Universe::new(1, 2)?;
        let mut leaves: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(N as usize)).collect();
        for s in 0..N {
            let g = GaussianErs::new(u, Mode::KWise { k: 2 }, cfg.child(8, 200_000 + s))?;
            for (i, col) in leaves.iter_mut().enumerate() {
                col.push(g.point_value(&[i as u64])?);
            }
        }
        let mut worst_corr = 0f64;
        for a in 0..4 {
            for b in a + 1..4 {
                worst_corr = worst_corr.max((pearson(&leaves[a], &leaves[b])? * (N as f64).sqrt()).abs());
            }
        }
        lines.push(CheckLine::new(
            "kwise(k=2) leaf pair correlations, delta=4 (10^5 seeds)",
            worst_corr <= 3.0,
            format!("max |r|·√N = {worst_corr:.3} (limit 3)"),
        ));
        let mut worst_z = 0f64;
        for col in &leaves {
            worst_z = Moments::of(col)?.normal_z_scores().iter().fold(worst_z, |acc, z| acc.max(z.abs()));
        }
        lines.push(CheckLine::new(
            "kwise(k=2) leaf moments 1-4, delta=4 (10^5 seeds)",
            worst_z <= 3.0,
            format!("max |z| = {worst_z:.3} (limit 3)"),
        ));
    }
    Ok(lines)
}

/// The fixed update stream used by the sketch checks.
pub fn synthetic_stream(u: &Universe) -> Vec<Update> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5354_5245_414d);
    (0..24)
        .map(|k| {
            if k % 4 == 3 {
                Update::Range { range: random_range(u, &mut rng), value: below(&mut rng, 12) as i64 - 3 }
            } else {
                Update::Point { point: random_point(u, &mut rng), value: 1 + below(&mut rng, 20) as i64 }
            }
        })
        .collect()
}

/// The fixed query on the synthetic stream: `[Δ/8, 5Δ/8)` on every axis.
pub fn synthetic_query(u: &Universe) -> RangeD {
    let (lo, hi) = (u.delta() / 8, 5 * u.delta() / 8);
    RangeD::new(&vec![lo; u.dims()], &vec![hi; u.dims()]).expect("nonempty query")
}

fn sketch_estimate(u: Universe, rows: usize, cols: usize, seed: MasterSeed, ups: &[Update], q: &RangeD) -> Result<f64> {
    let mut s = Sketch::new(u, rows, cols, seed)?;
    for up in ups {
        s.apply(up)?;
    }
    s.query(q)
}

/// Mean estimate over `seeds` single-estimator sketches, and its standard error.
fn mean_and_se(cfg: &CheckConfig, tag: u64, seeds: u64, u: Universe, ups: &[Update], q: &RangeD) -> Result<(f64, f64)> {
    let xs = (0..seeds)
        .map(|s| sketch_estimate(u, 1, 1, cfg.child(9, tag << 20 | s), ups, q))
        .collect::<Result<Vec<_>>>()?;
    let m = Moments::of(&xs)?;
    Ok((m.mean, (m.variance / seeds as f64).sqrt()))
}

fn sketch_application(cfg: &CheckConfig) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let universes = [Universe::new(1, 8)?, Universe::new(2, 6)?];

    for (i, &u) in universes.iter().enumerate() {
        let ups = synthetic_stream(&u);
        let q = synthetic_query(&u);
        let mut exact = ExactCounter::new(u, 1 << 16)?;
        for up in &ups {
            exact.apply(up)?;
        }
        let truth = exact.query(&q)? as f64;
        let (mean, se) = mean_and_se(cfg, i as u64, 10_000, u, &ups, &q)?;
        lines.push(CheckLine::new(
            format!("unbiased on the synthetic stream d={} delta={}", u.dims(), u.delta()),
            (mean - truth).abs() <= 3.0 * se,
            format!("mean {mean:.3} vs exact {truth} (3 SE = {:.3}, 10^4 seeds)", 3.0 * se),
        ));

        let mut medians = Vec::new();
        for (j, cols) in [4usize, 16, 64].into_iter().enumerate() {
            let mut errs = (0..50u64)
                .map(|s| {
                    let est = sketch_estimate(
                        u,
                        5,
                        cols,
                        cfg.child(9, (100 + i as u64 * 10 + j as u64) << 20 | s),
                        &ups,
                        &q,
                    )?;
                    Ok((est - truth).abs() / truth.abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[24] + errs[25]));
        }
        lines.push(CheckLine::new(
            format!("median relative error non-increasing in C d={} delta={}", u.dims(), u.delta()),
            truth != 0.0 && medians.windows(2).all(|w| w[0] >= w[1]),
            format!("C=4: {:.4}, C=16: {:.4}, C=64: {:.4} (50 seeds, R=5)", medians[0], medians[1], medians[2]),
        ));
    }

    {
        let u = universes[0];
        let point = Update::Point { point: vec![40], value: 7 };
        for (k, (q, want)) in
            [(RangeD::new(&[0], &[32])?, 0.0), (RangeD::new(&[16], &[100])?, 7.0)].into_iter().enumerate()
        {
            let (mean, se) = mean_and_se(cfg, 10 + k as u64, 10_000, u, std::slice::from_ref(&point), &q)?;
            lines.push(CheckLine::new(
                format!("single point update, query {q}"),
                (mean - want).abs() <= 3.0 * se,
                format!("mean {mean:.4} vs {want} (3 SE = {:.4}, 10^4 seeds)", 3.0 * se),
            ));
        }
    }

    {
        let u = universes[1];
        let mut s = Sketch::new(u, 5, 16, cfg.child(9, 500))?;
        for up in synthetic_stream(&u) {
            s.apply(&up)?;
        }
        let bytes = s.to_bytes();
        let loaded = Sketch::from_bytes(&bytes)?;
        let mut rng = cfg.rng(9, 500);
        let mut differing = 0;
        for _ in 0..100 {
            let r = random_range(&u, &mut rng);
            differing += (s.query(&r)?.to_bits() != loaded.query(&r)?.to_bits()) as u32;
        }
        let truncated = matches!(Sketch::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_)));
        lines.push(CheckLine::new(
            "persistence round trip",
            loaded.to_bytes() == bytes && differing == 0 && truncated,
            format!(
                "re-save identical: {}, {differing} of 100 queries differ, truncated file rejected: {truncated}",
                loaded.to_bytes() == bytes
            ),
        ));
    }

    {
        let out = golden_output()?;
        let same = out == GOLDEN_ESTIMATES;
        lines.push(CheckLine::new(
            "golden stream fixture",
            same,
            format!("{} estimate lines, byte-identical: {same}", out.lines().count()),
        ));
    }
    Ok(lines)
}

/// Runs the golden stream through a sketch with the pinned configuration.
pub fn golden_output() -> Result<String> {
    let u = Universe::new(GOLDEN_DIMS, GOLDEN_LOG2_DELTA)?;
    let mut s =
        Sketch::new(u, crate::sketch::DEFAULT_ROWS, crate::sketch::DEFAULT_COLS, MasterSeed::from_u64(GOLDEN_SEED))?;
    let mut out = Vec::new();
    s.process_stream(GOLDEN_STREAM.as_bytes(), &mut out)?;
    String::from_utf8(out).map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_enumeration_counts() {
        let mut n = 0;
        for_each_range(&Universe::new(2, 2).unwrap(), |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 100);
        let mut pts = Vec::new();
        for_each_point(&Universe::new(2, 1).unwrap(), |p| {
            pts.push(p.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(pts, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn compositions_are_complete() {
        assert_eq!(compositions(3, 16).len(), 816);
        assert_eq!(compositions(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn hypergeometric_small_table() {
        let t = hypergeometric_pmf(2, 1, 1);
        let half = BigRational::new(1.into(), 2.into());
        assert_eq!(t, vec![(0, half.clone()), (1, half)]);
    }

    #[test]
    fn random_ranges_are_valid() {
        let u = Universe::new(3, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            random_range(&u, &mut rng).check(&u).unwrap();
        }
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        assert!(run_criterion(0, &CheckConfig::default()).is_err());
        assert!(run_criterion(10, &CheckConfig::default()).is_err());
    }

    #[test]
    fn synthetic_query_has_mass() {
        for u in [Universe::new(1, 8).unwrap(), Universe::new(2, 6).unwrap()] {
            let mut c = ExactCounter::new(u, 1 << 16).unwrap();
            for up in synthetic_stream(&u) {
                c.apply(&up).unwrap();
            }
            assert_ne!(c.query(&synthetic_query(&u)).unwrap(), 0);
        }
    }
}
