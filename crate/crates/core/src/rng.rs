//! Seedable random number generation.
//!
//! There is no global generator: whoever owns a [`SeededRng`] passes it down
//! explicitly. Independent streams for sub-tasks (per epoch shuffle, per example
//! dropout) are derived from a seed and a stream id so any of them can be
//! recreated without replaying the others.

use rand::{Rng, RngCore, SeedableRng};
use rand_pcg::Pcg32;

/// PCG32 generator: 64 bits of state plus a 64-bit stream selector.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: Pcg32,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self {
            inner: Pcg32::new(mix(seed), mix(stream) | 1),
        }
    }

    /// A fresh generator on `stream`, seeded from this generator's next output.
    pub fn split(&mut self, stream: u64) -> Self {
        let seed = self.inner.next_u64();
        Self::with_stream(seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl Default for SeededRng {
    fn default() -> Self {
        Self::new(0)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

impl SeedableRng for SeededRng {
    type Seed = [u8; 8];

    fn from_seed(seed: Self::Seed) -> Self {
        Self::new(u64::from_le_bytes(seed))
    }
}

// splitmix64 finalizer, so that nearby seeds and stream ids decorrelate
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
