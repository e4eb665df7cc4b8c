//! Thin, error-mapped wrappers over `rand_distr` samplers.
//!
//! All draws take an explicit RNG so callers control the stream; with a fixed
//! `rand_distr` version the outputs are a pure function of that stream.

use rand_core::RngCore;
use rand_distr::{Binomial, Distribution, Hypergeometric, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::randomness::bits_to_unit;

/// Largest Poisson mean accepted; keeps every realized count exact in an `f64`.
pub const MAX_POISSON_MEAN: f64 = (1u64 << 50) as f64;

pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `center + scale·tan(π(u - ½))`.
pub fn cauchy<R: RngCore>(center: f64, scale: f64, rng: &mut R) -> f64 {
    let u = bits_to_unit(rng.next_u64());
    center + scale * (std::f64::consts::PI * (u - 0.5)).tan()
}

pub fn binomial<R: RngCore>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    let dist = Binomial::new(n, p).map_err(|e| Error::InvalidState(format!("Binomial({n}, {p}): {e}")))?;
    Ok(dist.sample(rng))
}

pub fn binomial_half<R: RngCore>(n: u64, rng: &mut R) -> Result<u64> {
    binomial(n, 0.5, rng)
}

/// Successes among `draws` taken without replacement from `population`
/// items of which `successes` are marked.
pub fn hypergeometric<R: RngCore>(population: u64, successes: u64, draws: u64, rng: &mut R) -> Result<u64> {
    let dist = Hypergeometric::new(population, successes, draws)
        .map_err(|e| Error::InvalidState(format!("Hypergeometric(N={population}, K={successes}, n={draws}): {e}")))?;
    Ok(dist.sample(rng))
}

pub fn poisson<R: RngCore>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(0.0..=MAX_POISSON_MEAN).contains(&mean) {
        return Err(Error::Unsupported(format!("Poisson mean {mean} outside [0, {MAX_POISSON_MEAN}]")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidState(format!("Poisson({mean}): {e}")))?;
    let x: f64 = dist.sample(rng);
    Ok(x as u64)
}
