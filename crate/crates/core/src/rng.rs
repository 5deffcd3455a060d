//! Deterministic PRNG used everywhere randomness is needed.
//!
//! SplitMix64: tiny, `no_std`, and bit-stable across platforms and
//! toolchains, which the reproducibility contract (same seed, same
//! trajectory) depends on. Streams can be forked with [`Rng::derive`]
//! so generators, init, and batch order never share state.

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Forks an independent stream keyed by a label, leaving `self` untouched.
    pub fn derive(&self, label: u64) -> Rng {
        let mut mixed = Rng {
            state: self.state ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        };
        // burn one output so derive(0) differs from the parent
        mixed.next_u64();
        Rng {
            state: mixed.next_u64(),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Symmetric uniform in [-a, a).
    pub fn symmetric(&mut self, a: f64) -> f64 {
        self.range(-a, a)
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        // multiply-shift; bias is negligible for the small n used here
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Picks one element of a slice.
    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
