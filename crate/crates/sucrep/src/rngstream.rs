//! Named, independent RNG streams derived from a single run seed.
//!
//! Every stochastic component draws from its own stream so that enabling or
//! disabling one component (an auxiliary loss, say) cannot shift the draws
//! seen by another. Streams are keyed by a label; the derivation is a fixed
//! splitmix64 mix of the seed and the label hash, so a (seed, label) pair
//! maps to the same stream on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates consecutive seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed ^ label_hash(label));
    let b = splitmix64(a);
    let c = splitmix64(b);
    let d = splitmix64(c);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream for `(seed, label, index)`; used for per-episode and per-tensor rngs.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    stream(splitmix64(seed.wrapping_add(splitmix64(index))), label)
}
