//! Seed derivation for isolated, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere a seeded stream is needed.
pub type SeededRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `master` for stream `stream`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(mix(master) ^ stream.wrapping_mul(0xD605_7B3E_4A1C_5F27))
}

/// Named sub-streams so that consumers of one stream never perturb another.
pub mod stream {
    pub const WARMUP: u64 = 1;
    pub const FIT: u64 = 2;
    pub const GRID: u64 = 3;
    pub const GAN: u64 = 4;
    pub const GAN_SAMPLE: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const FOLDS: u64 = 8;
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(master: u64, stream: u64) -> SeededRng {
    seeded(derive_seed(master, stream))
}
