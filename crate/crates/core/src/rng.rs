//! Counter-based random streams.
//!
//! Every random draw in a run comes from a generator keyed by
//! `(seed, purpose, index)`, so results never depend on call order or on
//! how work is scheduled across items.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data,
    Init,
    Langevin,
    Decode,
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Langevin => 3,
            Stream::Decode => 4,
            Stream::Shuffle => 5,
        }
    }
}

/// Generator for item `index` of `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.id().to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Packs two counters into one stream index.
pub fn pair_index(a: u64, b: u64) -> u64 {
    (a << 32) ^ b
}
