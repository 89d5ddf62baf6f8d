//! Seeded random streams.
//!
//! Every experiment is driven by one 64-bit seed. Consumers never share a
//! generator: each asks for its own [`Stream`], optionally indexed (epoch,
//! sample id, ...). A stream is a ChaCha8 generator keyed by a SplitMix64
//! mix of `(seed, index)` with the ChaCha stream id set to the consumer
//! kind, so the sequence is identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Consumer of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Parameter initialisation.
    Init,
    /// Data ordering (per-epoch shuffles, split assignment).
    Shuffle,
    /// Synthetic data generation.
    Data,
    /// Anything else (benchmark inputs, test fixtures).
    Aux,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Data => 3,
            Stream::Aux => 4,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of all randomness for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, kind: Stream) -> StreamRng {
        self.substream(kind, &[])
    }

    /// Independent stream for `kind` at a multi-part index, e.g. `[epoch]`
    /// or `[class, sample]`.
    pub fn substream(&self, kind: Stream, index: &[u64]) -> StreamRng {
        let mut key = splitmix64(self.seed);
        for &i in index {
            key = splitmix64(key ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(kind.id());
        StreamRng { inner }
    }
}

/// A single deterministic generator handed to one consumer.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n` (`n > 0`), rejection-sampled so it is exact
    /// and independent of pointer width.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
