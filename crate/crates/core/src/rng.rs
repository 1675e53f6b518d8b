//! Seed derivation.
//!
//! Every random draw in the crate comes from one 64-bit root seed. A
//! [`SeedStream`] names a position in a tree of ChaCha8 streams: the key is the
//! root seed, the 64-bit stream id is a hash of the path of labels that led
//! here. ChaCha is counter-based, so any leaf can be regenerated without
//! replaying its siblings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
    stream: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a string label (parameter names, phase names).
    pub fn child(&self, label: &str) -> Self {
        let mut h = self.stream ^ 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Self {
            seed: self.seed,
            stream: splitmix64(h),
        }
    }

    /// Child stream for an integer index (step counters, image indices).
    pub fn index(&self, i: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(i.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
