//! Named random substreams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataGen,
    Init,
    Batching,
    Jitter,
    Sampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::DataGen => 1,
            Stream::Init => 2,
            Stream::Batching => 3,
            Stream::Jitter => 4,
            Stream::Sampling => 5,
        }
    }
}

/// Independent generator for `stream`; the same `(seed, stream)` always
/// yields the same sequence.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Like [`substream`] but further split by an index (e.g. sensor number).
pub fn indexed_substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}
