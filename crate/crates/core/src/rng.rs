//! Seed derivation. Every random draw in the workbench comes from a ChaCha
//! stream keyed by `(base seed, stream id)`, so parallel and serial runs
//! produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the different consumers of a scenario seed.
pub mod stream {
    pub const CLUTTER: u64 = 0x636c_7574;
    pub const CHANNEL_PHASE: u64 = 0x7068_6173;
    pub const RADAR_NOISE: u64 = 0x6e6f_6973;
    pub const COMM_NOISE: u64 = 0x636f_6d6d;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SCENES: u64 = 0x7363_656e;
    pub const T_OBS: u64 = 0x746f_6273;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.rotate_left(17))
}

pub fn derive_seed2(base: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(base, stream), index)
}

pub fn stream_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed2(base, stream, index))
}
