//! Reproducible random streams.
//!
//! Every source of randomness in an experiment (network initialization,
//! message sampling, exploration noise, channel noise, feedback bit flips and
//! evaluation) draws from its own ChaCha stream derived from a single seed, so
//! changing how much one consumer draws never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    TransmitterInit = 1,
    ReceiverInit = 2,
    Messages = 3,
    Exploration = 4,
    Channel = 5,
    Feedback = 6,
    Evaluation = 7,
}

/// Concrete generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Returns the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> SimRng {
    substream(seed, stream, 0)
}

/// Returns the `index`-th independent substream of `stream` under `seed`.
pub fn substream(seed: u64, stream: Stream, index: u32) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}
