//! Deterministic randomness: seed derivation, polynomial hash families over the
//! Mersenne prime `2^61 - 1`, and counter-based Gaussian and Cauchy draws.
//!
//! Every value is a pure function of its seed and index, so sketches can be
//! regenerated entry by entry. Transcendental functions come from `libm` so the
//! values do not depend on the platform math library.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MERSENNE61: u64 = (1 << 61) - 1;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a labelled purpose.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    mix64(parent ^ mix64(tag.wrapping_mul(GOLDEN).wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Seeded ChaCha generator for sampling and initializations.
pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
fn mulmod61(a: u64, b: u64) -> u64 {
    let p = (a as u128) * (b as u128);
    let lo = (p as u64) & MERSENNE61;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= MERSENNE61 {
        s - MERSENNE61
    } else {
        s
    }
}

#[inline]
fn addmod61(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE61 {
        s - MERSENNE61
    } else {
        s
    }
}

/// A `w`-wise independent polynomial hash `x ↦ Σ a_i x^i mod (2^61 - 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyHash {
    coeffs: Vec<u64>,
}

impl PolyHash {
    pub fn new(seed: u64, w: usize) -> Self {
        let w = w.max(1);
        let mut coeffs = Vec::with_capacity(w);
        let mut state = seed;
        for d in 0..w {
            let mut c;
            loop {
                state = mix64(state.wrapping_add(d as u64 + 1));
                c = state & MERSENNE61;
                if c < MERSENNE61 && (d + 1 < w || c != 0) {
                    break;
                }
            }
            coeffs.push(c);
        }
        PolyHash { coeffs }
    }

    /// Value in `[0, 2^61 - 1)`.
    #[inline]
    pub fn eval(&self, x: u64) -> u64 {
        let x = x % MERSENNE61;
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = addmod61(mulmod61(acc, x), c);
        }
        acc
    }

    /// Bucket in `[0, m)`.
    #[inline]
    pub fn bucket(&self, x: u64, m: usize) -> usize {
        (self.eval(x) % m as u64) as usize
    }

    /// Sign in `{-1, +1}`.
    #[inline]
    pub fn sign(&self, x: u64) -> f64 {
        if self.eval(x) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Uniform in the open interval `(0, 1)` from `(seed, a, b)`.
#[inline]
pub fn unit_uniform(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix64(seed ^ mix64(a.wrapping_mul(GOLDEN) ^ mix64(b.wrapping_add(0xD1B5_4A32_D192_ED03))));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal entry `(r, c)` of the stream `seed` (Box-Muller).
#[inline]
pub fn gaussian_at(seed: u64, r: u64, c: u64) -> f64 {
    let u1 = unit_uniform(seed, r, c << 1);
    let u2 = unit_uniform(seed, r, (c << 1) | 1);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
}

/// Standard Cauchy entry `(r, c)` of the stream `seed`, as `tan(π(u − ½))`.
#[inline]
pub fn cauchy_at(seed: u64, r: u64, c: u64) -> f64 {
    let u = unit_uniform(seed, r, c);
    libm::tan(std::f64::consts::PI * (u - 0.5))
}
