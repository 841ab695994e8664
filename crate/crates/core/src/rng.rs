//! Reproducible random streams.
//!
//! Every draw in the crate comes from a [`RngStream`]: a `(seed, stream_id)`
//! pair that opens a ChaCha8 generator on a dedicated stream. Child streams are
//! derived by hashing a tag into the stream id, so work can be split across
//! episodes, rollouts and purposes without sharing mutable generator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose tags used when deriving child streams.
pub mod tag {
    pub const CONTEXT: u64 = 0x01;
    pub const INIT_POLICY: u64 = 0x02;
    pub const STEP_SIZE: u64 = 0x03;
    pub const BATCH: u64 = 0x04;
    pub const EPISODE: u64 = 0x05;
    pub const TRAIN: u64 = 0x06;
    pub const VALIDATION: u64 = 0x07;
    pub const TEST: u64 = 0x08;
    pub const FOREST: u64 = 0x09;
    pub const TREE: u64 = 0x0a;
    pub const ROLLOUT: u64 = 0x0b;
    pub const PAIR: u64 = 0x0c;
    pub const START: u64 = 0x0d;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// Child stream keyed by `tag`; distinct tags give distinct streams.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Shorthand for `self.derive(tag).derive(index)`.
    pub fn child(&self, tag: u64, index: u64) -> Self {
        self.derive(tag).derive(index)
    }

    /// Opens a fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream_id);
        StreamRng { inner }
    }
}

/// Generator opened from a [`RngStream`].
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }
}
