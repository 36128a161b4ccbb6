//! Seeded, splittable randomness for reproducible sampling.
//!
//! Every random draw in this crate flows through a ChaCha8 stream keyed by
//! `(base_seed, stream_index)`: the 64-bit seed selects the key and the
//! stream index selects an independent ChaCha stream. Sample `i` of a pool
//! therefore sees the same random sequence whether it is generated alone,
//! in a batch, sequentially, or on a rayon worker.
//!
//! Uniform doubles are derived as `(next_u64 >> 11) * 2^-53` so the mapping
//! from stream bits to floats is pinned here rather than inherited from a
//! library default, and bounded draws use Lemire's unbiased multiply-shift
//! rejection. A port in another language that reproduces ChaCha8 plus these
//! two mappings reproduces every artifact bit for bit.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Independent random stream for one sample of a pool.
pub fn sample_stream(base_seed: u64, stream_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream_index);
    rng
}

/// Deterministically fold extra identifiers (grid cell, policy variant,
/// problem index) into a seed. SplitMix64 finalizer per component.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = base;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of a string, for folding names into seeds.
pub fn hash_str(s: &str) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for b in s.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// One uniform double in `[0, 1)` from exactly one `u64` draw.
pub fn unit_uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, bound)` without modulo bias.
pub fn rand_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0);
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (bound as u128);
        let low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            if low < threshold {
                continue;
            }
        }
        return (m >> 64) as u64;
    }
}
