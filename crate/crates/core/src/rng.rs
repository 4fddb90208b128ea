//! Named random sub-streams.
//!
//! Every random decision in the engine draws from a ChaCha stream derived from
//! one root seed plus a stream name, so a single component (say, dropout) can
//! be re-seeded or replayed without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const WORLD: &str = "world";
pub const POLICY: &str = "policy";
pub const DROPOUT: &str = "dropout";
pub const ENVIRONMENT: &str = "environment";
pub const INIT: &str = "init";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable 64-bit hash of a string, used for stream ids and token hashing.
pub fn stable_hash(s: &str) -> u64 {
    fnv1a(s.as_bytes())
}

/// Stream `name` of the generator family rooted at `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stable_hash(name));
    rng
}
