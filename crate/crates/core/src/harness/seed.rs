//! Counter-based seed derivation. Every random stream of a run is a pure
//! function of the master seed and its position (cell, episode, step,
//! purpose), so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for per-step streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ControlSampling = 1,
    ModelNoise = 2,
    Environment = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a word sequence.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c908, |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

pub fn episode_seed(master: u64, cell: u64, episode: u64) -> u64 {
    mix(&[master, cell, episode])
}

pub fn step_seed(episode_seed: u64, t: u64, stream: Stream) -> u64 {
    mix(&[episode_seed, t, stream as u64])
}

pub fn step_rng(episode_seed: u64, t: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(step_seed(episode_seed, t, stream))
}
