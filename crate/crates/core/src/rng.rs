//! Seeded ChaCha streams. Every consumer of randomness draws from its own
//! stream so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Init = 1,
    Shuffle = 2,
    Means = 3,
    Train = 4,
    ValMatched = 5,
    ValMismatched = 6,
    Test = 7,
    Challenge = 8,
    Pool = 9,
    Inject = 10,
    BiasModel = 11,
}

pub(crate) fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Derives an independent seed for a sub-run (e.g. the bias model of a run).
pub(crate) fn derive_seed(seed: u64, which: Stream) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ (which as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
