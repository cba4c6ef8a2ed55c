//! Deterministic random streams derived from one master seed.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by a tag and
//! up to two indices, so results never depend on the order in which streams
//! are consumed (or on how many threads consume them).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream families. Ablations vary one factor while the other streams stay
/// fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Partition,
    Sampling,
    Init,
    Batching,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Partition => 0x7061_7274,
            Stream::Sampling => 0x7361_6d70,
            Stream::Init => 0x696e_6974,
            Stream::Batching => 0x6261_7463,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Seed for `(stream, a, b)`.
    pub fn seed(&self, stream: Stream, a: u64, b: u64) -> u64 {
        let mut h = splitmix64(self.master);
        h = splitmix64(h ^ stream.tag());
        h = splitmix64(h ^ a);
        splitmix64(h ^ b.rotate_left(32))
    }

    pub fn rng(&self, stream: Stream, a: u64, b: u64) -> SimRng {
        SimRng::seed_from_u64(self.seed(stream, a, b))
    }
}
