//! Seeded random streams. Every module draws from its own labelled stream
//! derived from the single run seed, so adding draws in one module never
//! shifts another module's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_OPTIMIZE: u64 = 1;
pub const STREAM_SYNTH: u64 = 2;
pub const STREAM_WORKLOAD: u64 = 3;

pub fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

/// Stream for an indexed sub-unit (for example one frame) of a labelled stream.
pub fn substream(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(label);
    rng
}
