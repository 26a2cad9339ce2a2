//! Seeded RNG sub-streams.
//!
//! One experiment seed fans out into independent named streams so that
//! data generation, parameter init, and shuffling can be varied
//! independently while staying reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream ids carved out of the per-seed ChaCha stream space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Init,
    Shuffle(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            // one shuffle stream per epoch
            Stream::Shuffle(epoch) => 1_000 + epoch,
        }
    }
}

/// Deterministic generator for the given seed and stream.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
