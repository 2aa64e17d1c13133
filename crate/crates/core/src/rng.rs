//! Counter-based random substreams.
//!
//! Every random draw in the pipeline is addressed by `(seed, stream, index)`.
//! A substream is a ChaCha8 generator keyed by `seed`, with the stream id
//! selecting the ChaCha nonce and the sample index selecting a disjoint
//! 2^32-word window of the keystream. Draws for index `i` therefore never
//! depend on how many other indices were drawn before, or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream ids used across the pipeline.
pub mod streams {
    pub const TRAIN_PARAMETER: u64 = 1;
    pub const TRAIN_CONTROL: u64 = 2;
    pub const TEST_PARAMETER: u64 = 3;
    pub const TEST_CONTROL: u64 = 4;
    pub const OPTIMIZE_PARAMETER: u64 = 5;
    pub const EVALUATE_PARAMETER: u64 = 6;
    pub const WEIGHT_INIT: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const MISC: u64 = 9;
}

const WORDS_PER_INDEX: u128 = 1 << 32;

/// Generator for the substream `(seed, stream, index)`.
pub fn substream(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(index as u128 * WORDS_PER_INDEX);
    rng
}
