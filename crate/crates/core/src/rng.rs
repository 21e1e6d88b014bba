//! Seeded random streams.
//!
//! Every consumer of randomness derives a ChaCha stream from a 64-bit run
//! seed plus a `(domain, id, index)` triple. The triple is packed into the
//! ChaCha stream number, so distinct triples never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named purposes so that e.g. identity sampling and texture sampling with the
/// same seed draw unrelated numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    General = 0,
    Identity = 1,
    Texture = 2,
    Perspective = 3,
    Stage1 = 4,
    Stage2 = 5,
    Homography = 6,
    Quality = 7,
    Training = 8,
    Ransac = 9,
    Sampling = 10,
    Matcher = 11,
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for `(domain, id, index)` under `seed`. `id` is truncated to 24 bits
/// and `index` to 32 bits; callers stay well below both.
pub fn stream(seed: u64, domain: Domain, id: u64, index: u64) -> Rng {
    debug_assert!(id < (1 << 24) && index < (1 << 32));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let packed = ((domain as u64) << 56) | ((id & 0xFF_FFFF) << 32) | (index & 0xFFFF_FFFF);
    rng.set_stream(packed);
    rng
}
