//! Keyed counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(seed, component, layer, block)`, so results do not depend on evaluation
//! order or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a list of integers.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3u64, |h, &p| splitmix(h ^ splitmix(p)))
}

/// Stream components.
pub mod component {
    pub const WHITE_NOISE: u64 = 1;
    pub const POISSON: u64 = 2;
    pub const LAMINATE: u64 = 3;
    pub const CHECKER: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const TRIALS: u64 = 6;
    pub const BOUNDARY: u64 = 7;
}

pub fn substream(seed: u64, component: u64, layer: i64, block: &[i64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, component]));
    let mut parts = vec![layer as u64];
    parts.extend(block.iter().map(|&b| b as u64));
    rng.set_stream(mix(&parts));
    rng
}

/// Seed of the `index`-th sample of an experiment at a given level.
pub fn sample_seed(seed: u64, level: u32, index: u64) -> u64 {
    mix(&[seed, component::SAMPLE, level as u64, index])
}
