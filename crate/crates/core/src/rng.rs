use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every simulated stream.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// SplitMix64 finalizer. Used to derive decorrelated per-run seeds.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `index` of an experiment whose base seed is `seed`: `mix(mix(seed) ^ index)`.
///
/// Mixing the seed before the XOR keeps `(seed, index)` pairs such as `(1, 0)` and
/// `(0, 1)` from sharing a stream.
pub fn run_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index)
}
