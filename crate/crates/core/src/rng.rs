//! Seed derivation. Every random stream in a run is derived from one master
//! seed so that runs replay exactly and parallel workers never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(mix(master) ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Named sub-streams so that e.g. initialization and simulation noise never overlap.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const WARM_START: u64 = 2;
    pub const MEMBERS: u64 = 3;
    pub const SIMULATION: u64 = 4;
}

pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
