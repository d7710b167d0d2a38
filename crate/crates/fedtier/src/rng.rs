//! Deterministic pseudo-random generator used everywhere randomness is needed.
//!
//! Every stochastic step in the simulator (weight init, mini-batch shuffles,
//! synthetic data, partition selection) draws from this generator so that a
//! run is fully reproducible from its seeds, independent of platform or any
//! external RNG crate's versioning. The generator is SplitMix64: a 64-bit
//! counter advanced by the golden-ratio increment, finalized with two
//! xor-multiply rounds. Sub-streams are derived by folding context words
//! (robot id, round, epoch, ...) into a base seed with the same finalizer.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, bound) via the multiply-shift map.
    /// `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller; consumes exactly two raw draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Folds context words into a base seed, yielding an independent sub-stream
/// seed for (robot, round, epoch)-style scoping.
pub fn derive_seed(base: u64, context: &[u64]) -> u64 {
    let mut h = base;
    for &word in context {
        h = mix(h.wrapping_add(GOLDEN_GAMMA).wrapping_add(word));
    }
    h
}
