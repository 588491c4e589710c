//! Seedable, portable pseudo-random number generator.
//!
//! Splits, shuffles and augmentation draws must be byte-reproducible across
//! platforms and releases, so the generator is pinned here rather than taken
//! from an external crate: SplitMix64 (Steele, Lea & Flood 2014), 64-bit
//! state, with the same mixing function used to derive per-epoch child seeds.

/// SplitMix64 generator. One `u64` of state; `next_u64` applies the
/// mix64 finalizer to a Weyl-sequence counter.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GAMMA: u64 = 0x9E3779B97F4A7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derive an independent child seed, e.g. `derive(seed, epoch)` for
    /// per-epoch shuffling. Deterministic and collision-resistant for
    /// practical stream counts.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        mix64(seed.wrapping_add(GAMMA.wrapping_mul(stream.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection sampling to avoid modulo
    /// bias (matters for reproducibility claims, not statistics).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Pick one element of a slice.
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.next_below(items.len() as u64) as usize]
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
