//! Deterministic stream-tree randomness.
//!
//! Every stochastic routine in the crate receives a [`StreamSeed`] and derives
//! independent child seeds or ChaCha generators from it. Two guarantees hold:
//! the same root seed always reproduces the same results regardless of how work
//! is scheduled across threads, and distinct (step, particle, phase) triples
//! never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix2(a: u64, b: u64) -> u64 {
    mix(a ^ mix(b.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Root of a deterministic stream tree. Cheap to copy; children and streams
/// derived from distinct tags are statistically independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(seed)
    }

    /// Independent subtree for the given tag.
    pub fn child(self, tag: u64) -> StreamSeed {
        StreamSeed(mix2(self.0, tag))
    }

    /// Independent generator for the given stream id under this seed.
    /// Distinct ids under the same seed index provably independent ChaCha
    /// streams.
    pub fn rng(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// Phases of a particle sweep, kept disjoint in the stream-id space.
pub(crate) mod phase {
    pub const INIT: u8 = 0;
    pub const MUTATE: u8 = 1;
    pub const RESAMPLE: u8 = 2;
    pub const NOISE: u8 = 3;
    pub const DRAW: u8 = 4;
}

/// Pack (step, particle, phase) into a stream id. Steps up to 2^24 and
/// particle indices up to 2^32 are supported.
pub(crate) fn stream_id(step: usize, particle: usize, phase: u8) -> u64 {
    debug_assert!(step < (1 << 24));
    debug_assert!(particle < (1 << 32));
    ((phase as u64) << 56) | ((step as u64) << 32) | particle as u64
}
