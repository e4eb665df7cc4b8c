//! Seeded randomness.
//!
//! Everything random in this crate is a pure function of a 256-bit
//! [`MasterSeed`]. Two generators sit on top of it:
//!
//! * [`Prf`], a keyed counter-mode PRF (ChaCha20 keyed by a per-purpose subkey,
//!   with the caller's 64-bit key as the stream id). Used for DST node
//!   randomness and for the truly-random-hash proxy mode.
//! * [`KWiseHash`], polynomial hashing over the Mersenne field `2^61 - 1`.
//!
//! [`CoeffSource`] maps a Haar coefficient to a standard Gaussian value in
//! either mode.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::universe::{HaarIndex, Universe};

/// The Mersenne prime `2^61 - 1`.
pub const MERSENNE_61: u64 = (1u64 << 61) - 1;

/// Tag XOR-ed into a location key to obtain the second field point of a coefficient.
/// Packed keys use at most 60 bits, so tagged keys never collide with untagged ones.
const SECOND_UNIFORM_TAG: u64 = 1u64 << 60;

/// Bits available for packed location keys.
pub const MAX_KEY_BITS: u32 = 60;

#[inline]
pub fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64) -> u64 {
    mod_mersenne(a as u128 * b as u128)
}

#[inline]
pub fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// Maps a field element to the open unit interval via its top 52 bits.
///
/// `(raw + 0.5) / p` would round to exactly 1.0 for the largest elements;
/// with 52 bits the half offset stays exact.
#[inline]
pub fn field_to_unit(raw: u64) -> f64 {
    ((raw >> 9) as f64 + 0.5) * UNIT_SCALE
}

const UNIT_SCALE: f64 = 1.0 / (1u64 << 52) as f64;

/// Maps the top 52 bits of a random word to the open unit interval.
#[inline]
pub fn bits_to_unit(raw: u64) -> f64 {
    ((raw >> 12) as f64 + 0.5) * UNIT_SCALE
}

/// Box–Muller: `√(-2 ln u1)·cos(2π u2)`.
#[inline]
pub fn uniform_to_gaussian(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// 256-bit master seed, written as up to 64 hex digits (big-endian, left padded).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MasterSeed([u8; 32]);

impl MasterSeed {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_u64(v: u64) -> Self {
        let mut b = [0u8; 32];
        b[24..].copy_from_slice(&v.to_be_bytes());
        Self(b)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Child seed for an independent component (e.g. one sketch estimator).
    pub fn derive(&self, purpose: u64) -> MasterSeed {
        let mut out = [0u8; 32];
        Prf::new(self, Domain::Derive).stream(purpose, 0).fill_bytes(&mut out);
        MasterSeed(out)
    }
}

impl fmt::Debug for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterSeed({})", self.to_hex())
    }
}

impl fmt::Display for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for MasterSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        if s.is_empty() || s.len() > 64 {
            return Err(Error::InvalidSeed(format!("expected 1..=64 hex digits, got {} characters", s.len())));
        }
        let padded = format!("{s:0>64}");
        let mut out = [0u8; 32];
        hex::decode_to_slice(&padded, &mut out).map_err(|e| Error::InvalidSeed(e.to_string()))?;
        Ok(Self(out))
    }
}

/// Separates the PRF key space by purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ProxyCoefficients = 1,
    HashSeeds = 2,
    Dst1d = 3,
    Poisson2d = 4,
    Derive = 5,
}

/// Keyed counter-mode PRF.
///
/// The subkey is the first 32 bytes of the ChaCha20 stream `domain` under the
/// master seed. `stream(id, block)` is ChaCha20 under the subkey, stream `id`,
/// positioned at block `block`.
#[derive(Clone)]
pub struct Prf {
    key: [u8; 32],
}

impl fmt::Debug for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Prf(..)")
    }
}

impl Prf {
    pub fn new(seed: &MasterSeed, domain: Domain) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed.0);
        rng.set_stream(domain as u64);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self { key }
    }

    pub fn stream(&self, id: u64, block: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(self.key);
        rng.set_stream(id);
        if block != 0 {
            rng.set_word_pos(block as u128 * 16);
        }
        rng
    }
}

/// Degree `k-1` polynomial over `GF(2^61 - 1)`; a k-wise independent family
/// when the coefficients are uniform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KWiseHash {
    coeffs: Vec<u64>,
}

impl KWiseHash {
    /// `coeffs[i]` multiplies `x^i`.
    pub fn from_coeffs(coeffs: Vec<u64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidState(format!("k-wise hash needs k >= 2, got {}", coeffs.len())));
        }
        if let Some(c) = coeffs.iter().find(|&&c| c >= MERSENNE_61) {
            return Err(Error::InvalidState(format!("coefficient {c} is not a field element")));
        }
        Ok(Self { coeffs })
    }

    /// Draws `k` uniform field elements from `rng` (rejection on 61-bit words).
    pub fn random<R: RngCore>(k: usize, rng: &mut R) -> Result<Self> {
        let coeffs = (0..k)
            .map(|_| loop {
                let v = rng.next_u64() >> 3;
                if v < MERSENNE_61 {
                    break v;
                }
            })
            .collect();
        Self::from_coeffs(coeffs)
    }

    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    /// Horner evaluation; keys are reduced into the field first.
    #[inline]
    pub fn eval(&self, key: u64) -> u64 {
        let x = mod_mersenne(key as u128);
        self.coeffs.iter().rev().fold(0u64, |acc, &c| add_mod(mul_mod(acc, x), c))
    }
}

/// How coefficient values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Keyed PRF over `(scales, locations)`; stands in for a truly random hash.
    TrulyRandomProxy,
    /// One independent k-wise hash per d-scale.
    KWise { k: usize },
}

impl Default for Mode {
    fn default() -> Self {
        Mode::KWise { k: 4 }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::TrulyRandomProxy => f.write_str("proxy"),
            Mode::KWise { k } => write!(f, "kwise(k={k})"),
        }
    }
}

/// Produces the Gaussian Haar coefficient `W` for any `CoeffRef` of a universe.
#[derive(Clone)]
pub struct CoeffSource {
    universe: Universe,
    mode: Mode,
    seed: MasterSeed,
    prf: Prf,
    /// Indexed by flattened scale slot (row-major over `(m_1+1, …, m_d+1)`).
    hashes: Vec<KWiseHash>,
}

impl fmt::Debug for CoeffSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoeffSource")
            .field("universe", &self.universe)
            .field("mode", &self.mode)
            .field("seed", &self.seed)
            .field("hashes", &self.hashes.len())
            .finish()
    }
}

impl CoeffSource {
    pub fn new(universe: Universe, mode: Mode, seed: MasterSeed) -> Result<Self> {
        let key_bits = universe.log2_delta() as u64 * universe.dims() as u64;
        if key_bits > MAX_KEY_BITS as u64 {
            return Err(Error::Unsupported(format!(
                "d·L = {key_bits} exceeds {MAX_KEY_BITS}; locations cannot be packed into one key"
            )));
        }
        let hashes = match mode {
            Mode::TrulyRandomProxy => Vec::new(),
            Mode::KWise { k } => {
                if k < 2 {
                    return Err(Error::Unsupported(format!("k-wise mode needs k >= 2, got {k}")));
                }
                let slots = universe.scales_per_dim().pow(universe.dims() as u32);
                let prf = Prf::new(&seed, Domain::HashSeeds);
                // Each Gaussian consumes two field points, so k Gaussians need a
                // 2k-wise independent polynomial.
                (0..slots)
                    .map(|s| KWiseHash::random(2 * k, &mut prf.stream(s as u64, 0)))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Self { universe, mode, seed, prf: Prf::new(&seed, Domain::ProxyCoefficients), hashes })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> &MasterSeed {
        &self.seed
    }

    /// Number of per-scale hash functions held (`(L+1)^d` in k-wise mode).
    pub fn hash_count(&self) -> usize {
        self.hashes.len()
    }

    /// Flattened index of a scale vector.
    pub fn scale_slot(&self, refs: &[HaarIndex]) -> usize {
        let per = self.universe.scales_per_dim();
        refs.iter().fold(0usize, |acc, h| acc * per + h.scale_slot())
    }

    /// The hash function assigned to the scale vector of `refs` (k-wise mode).
    pub fn hash_for(&self, refs: &[HaarIndex]) -> Option<&KWiseHash> {
        self.hashes.get(self.scale_slot(refs))
    }

    /// Locations packed big-endian, `L` bits each.
    pub fn location_key(&self, refs: &[HaarIndex]) -> u64 {
        let l = self.universe.log2_delta();
        refs.iter().fold(0u64, |acc, h| (acc << l) | h.location)
    }

    /// Standard Gaussian value of the coefficient `refs`.
    pub fn coeff_value(&self, refs: &[HaarIndex]) -> Result<f64> {
        if refs.len() != self.universe.dims() {
            return Err(Error::Internal(format!(
                "coefficient has {} indices, universe has {} dimensions",
                refs.len(),
                self.universe.dims()
            )));
        }
        let key = self.location_key(refs);
        let slot = self.scale_slot(refs);
        match self.mode {
            Mode::KWise { .. } => {
                let h = self
                    .hashes
                    .get(slot)
                    .ok_or_else(|| Error::Internal(format!("no hash function for scale slot {slot}")))?;
                let u1 = field_to_unit(h.eval(key));
                let u2 = field_to_unit(h.eval(key ^ SECOND_UNIFORM_TAG));
                Ok(uniform_to_gaussian(u1, u2))
            }
            Mode::TrulyRandomProxy => {
                let mut s = self.prf.stream(key, slot as u64);
                let u1 = bits_to_unit(s.next_u64());
                let u2 = bits_to_unit(s.next_u64());
                Ok(uniform_to_gaussian(u1, u2))
            }
        }
    }
}
