//! Seeded RNG substreams.
//!
//! Every random decision in the crate flows from a single 64-bit seed through
//! named substreams, so runs are reproducible and independent stages cannot
//! perturb each other. Substreams are counter-based: `stream(seed, name, index)`
//! yields the same generator no matter how many other streams were consumed,
//! which keeps parallel and serial generation byte-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; cheap, stable label -> u64 mapping.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A generator for the `index`-th item of the named substream.
pub fn stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    rng.set_stream(index);
    rng
}

/// A generator for a named substream without a counter dimension.
pub fn named(seed: u64, name: &str) -> ChaCha8Rng {
    stream(seed, name, 0)
}
