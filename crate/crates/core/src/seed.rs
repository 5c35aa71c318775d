//! Counter-based seed splitting.
//!
//! A root seed is expanded into independent substreams by hashing the root
//! together with a stream tag and a path of counters (repetition, episode,
//! atom index, ...). Each word is folded in with one SplitMix64 round:
//!
//! ```text
//! state = root
//! for word in [tag, counters...]:
//!     state = splitmix64(state ^ splitmix64(word + GOLDEN))
//! ```
//!
//! The derived 64-bit value seeds a ChaCha8 generator. Because every consumer
//! owns its own tag, adding a consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Named substreams. The discriminant is the tag folded into the hash and is
/// part of the reproducibility contract; do not renumber.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    BeliefSampling = 1,
    ClassSampling = 2,
    Trajectory = 3,
    ChannelSampling = 4,
    Environment = 5,
    Episode = 6,
    Repetition = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of substream `stream` at the counter path `path`.
pub fn derive(root: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ splitmix64((stream as u64).wrapping_add(GOLDEN)));
    for &word in path {
        state = splitmix64(state ^ splitmix64(word.wrapping_add(GOLDEN)));
    }
    state
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(root: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    rng_from_seed(derive(root, stream, path))
}
