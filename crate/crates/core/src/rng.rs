//! Seeded random streams. Every consumer derives its own stream from the run
//! seed so that results do not depend on call order across subsystems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes several integers into one seed (splitmix64 finalizer).
pub fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

// stream identifiers
pub const INIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const AUGMENT: u64 = 3;
pub const DROPOUT: u64 = 4;
pub const EPISODE: u64 = 5;
pub const KMEANS: u64 = 6;
pub const SYNTH: u64 = 7;
