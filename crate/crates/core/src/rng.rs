//! Counter-based derivation of independent RNG sub-streams.
//!
//! Every random draw in a run comes from a stream keyed by the master seed
//! plus a tuple of integers (purpose, setup, test point, AP, ...). Streams do
//! not depend on execution order, so parallel runs reproduce serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags mixed into the stream key.
pub mod purpose {
    pub const SCENARIO: u64 = 1;
    pub const RP_SHADOW: u64 = 2;
    pub const RP_SIGNAL: u64 = 3;
    pub const OFFLINE_AOA: u64 = 4;
    pub const TP_SHADOW: u64 = 5;
    pub const TP_SIGNAL: u64 = 6;
    pub const CRB_NOISE: u64 = 7;
    pub const SETUP: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a master seed and a key tuple into a 64-bit stream seed.
pub fn stream_seed(master: u64, key: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for (i, &k) in key.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(k.wrapping_add((i as u64 + 1) << 56)));
    }
    h
}

pub fn substream(master: u64, key: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, key))
}
