//! Goodness-of-fit and dependence tests used by the verification suites.

use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest sample accepted by the KS test; below this the asymptotic
/// critical values are unreliable.
pub const KS_MIN_SAMPLES: usize = 35;

/// Minimum expected count per cell after pooling.
pub const MIN_EXPECTED: f64 = 5.0;

/// Outcome of one hypothesis test. `passed` is judged at the 1% level.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub crit_1pct: f64,
    pub crit_5pct: f64,
    pub p_value: f64,
    pub passed: bool,
}

impl TestReport {
    fn new(name: &str, statistic: f64, crit_1pct: f64, crit_5pct: f64, p_value: f64) -> Self {
        Self { name: name.to_string(), statistic, crit_1pct, crit_5pct, p_value, passed: statistic <= crit_1pct }
    }

    pub fn passed_at_5pct(&self) -> bool {
        self.statistic <= self.crit_5pct
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} statistic={:.6} crit1%={:.6} crit5%={:.6} p={:.4} {}",
            self.name,
            self.statistic,
            self.crit_1pct,
            self.crit_5pct,
            self.p_value,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn cauchy_cdf(x: f64, center: f64, scale: f64) -> f64 {
    0.5 + ((x - center) / scale).atan() / std::f64::consts::PI
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u32 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test given the sample sorted ascending and the hypothesized
/// CDF at each sample point. Critical values use the Stephens correction
/// `c(α) / (√n + 0.12 + 0.11/√n)`.
pub fn ks_test_from_cdf(name: &str, cdf_at_sorted: &[f64]) -> Result<TestReport> {
    let n = cdf_at_sorted.len();
    if n < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { need: KS_MIN_SAMPLES, got: n });
    }
    let nf = n as f64;
    let d = cdf_at_sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| ((i + 1) as f64 / nf - f).max(f - i as f64 / nf))
        .fold(0.0, f64::max);
    let en = nf.sqrt() + 0.12 + 0.11 / nf.sqrt();
    Ok(TestReport::new(name, d, 1.6276 / en, 1.3581 / en, kolmogorov_q(en * d)))
}

pub fn ks_test<F: Fn(f64) -> f64>(name: &str, samples: &[f64], cdf: F) -> Result<TestReport> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let values: Vec<f64> = sorted.iter().map(|&x| cdf(x)).collect();
    ks_test_from_cdf(name, &values)
}

/// Report for a statistic that is chi-square with `df` degrees of freedom under the null.
pub fn chi_square_report(name: &str, statistic: f64, df: usize) -> Result<TestReport> {
    if df == 0 {
        return Err(Error::TooFewSamples { need: 2, got: 1 });
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(TestReport::new(name, statistic, dist.inverse_cdf(0.99), dist.inverse_cdf(0.95), 1.0 - dist.cdf(statistic)))
}

/// Merges adjacent bins until each expected count is at least [`MIN_EXPECTED`].
fn pool(observed: &[f64], expected: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (mut obs, mut exp) = (Vec::new(), Vec::new());
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= MIN_EXPECTED {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match (obs.last_mut(), exp.last_mut()) {
            (Some(lo), Some(le)) => {
                *lo += o;
                *le += e;
            }
            _ => {
                obs.push(o);
                exp.push(e);
            }
        }
    }
    (obs, exp)
}

/// Pearson chi-square goodness of fit. `probs` must cover the whole support
/// (include a tail bin if needed) and sum to one.
pub fn chi_square_gof(name: &str, observed: &[u64], probs: &[f64]) -> Result<TestReport> {
    if observed.len() != probs.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: observed.len() });
    }
    let total_p: f64 = probs.iter().sum();
    if (total_p - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("bin probabilities sum to {total_p}")));
    }
    let n: u64 = observed.iter().sum();
    let obs: Vec<f64> = observed.iter().map(|&o| o as f64).collect();
    let exp: Vec<f64> = probs.iter().map(|&p| p * n as f64).collect();
    let (obs, exp) = pool(&obs, &exp);
    let stat = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    chi_square_report(name, stat, obs.len().saturating_sub(1))
}

/// Chi-square test of independence on a contingency table. Sparse rows and
/// columns are merged with their neighbours until every expected count
/// reaches [`MIN_EXPECTED`] or the table cannot shrink further.
pub fn chi_square_independence(name: &str, table: &[Vec<u64>]) -> Result<TestReport> {
    let mut t: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let cols = t.first().map_or(0, Vec::len);
    if t.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidState("ragged contingency table".into()));
    }
    t.retain(|r| r.iter().sum::<f64>() > 0.0);
    let keep: Vec<usize> = (0..cols).filter(|&j| t.iter().map(|r| r[j]).sum::<f64>() > 0.0).collect();
    t = t.into_iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();

    loop {
        let (rows, cols) = (t.len(), t.first().map_or(0, Vec::len));
        if rows < 2 || cols < 2 {
            return Err(Error::TooFewSamples { need: 2, got: rows.min(cols) });
        }
        let n: f64 = t.iter().flatten().sum();
        let rs: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
        let cs: Vec<f64> = (0..cols).map(|j| t.iter().map(|r| r[j]).sum()).collect();
        let (min_r, min_c) = (argmin(&rs), argmin(&cs));
        if rs[min_r] * cs[min_c] / n >= MIN_EXPECTED {
            let mut stat = 0.0;
            for i in 0..rows {
                for j in 0..cols {
                    let e = rs[i] * cs[j] / n;
                    stat += (t[i][j] - e).powi(2) / e;
                }
            }
            return chi_square_report(name, stat, (rows - 1) * (cols - 1));
        }
        // Merge the thinner margin's smallest line into a neighbour.
        if (rs[min_r] <= cs[min_c] || cols == 2) && rows > 2 {
            merge_row(&mut t, min_r);
        } else if cols > 2 {
            let mut tt = transpose(&t);
            merge_row(&mut tt, min_c);
            t = transpose(&tt);
        } else {
            return Err(Error::TooFewSamples { need: (4.0 * MIN_EXPECTED) as usize, got: n as usize });
        }
    }
}

fn merge_row(t: &mut Vec<Vec<f64>>, i: usize) {
    let row = t.remove(i);
    let into = if i < t.len() { i } else { i - 1 };
    for (a, b) in t[into].iter_mut().zip(row) {
        *a += b;
    }
}

fn transpose(t: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = t.first().map_or(0, Vec::len);
    (0..cols).map(|j| t.iter().map(|r| r[j]).collect()).collect()
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidState("correlation of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    pearson(&ranks(x), &ranks(y))
}

/// Sample mean, variance, skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Result<Self> {
        if x.len() < 4 {
            return Err(Error::TooFewSamples { need: 4, got: x.len() });
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in x {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        Ok(Self {
            n: x.len(),
            mean,
            variance: m2 * n / (n - 1.0),
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        })
    }

    /// Distances from the standard normal moments in units of their
    /// asymptotic standard errors: mean, variance, skewness, kurtosis.
    pub fn normal_z_scores(&self) -> [f64; 4] {
        let n = self.n as f64;
        [
            self.mean / (1.0 / n).sqrt(),
            (self.variance - 1.0) / (2.0 / n).sqrt(),
            self.skewness / (6.0 / n).sqrt(),
            self.excess_kurtosis / (24.0 / n).sqrt(),
        ]
    }
}
