//! Deterministic pseudo-randomness for splits, synthetic data, and
//! parameter initialization.
//!
//! Everything that consumes randomness in this crate is keyed by a 64-bit
//! seed and drawn from [`SplitMix64`], so a seed fully determines splits,
//! generated graphs, and initial weights across platforms and releases.
//! SplitMix64 is the output-mixing generator from Steele, Lea & Flood,
//! "Fast splittable pseudorandom number generators" (OOPSLA 2014): a 64-bit
//! counter advanced by the golden-ratio increment, hashed by two xor-shift
//! multiplies.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Splittable 64-bit PRNG with a one-word state.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for substream `index` of a run keyed by `seed`.
    ///
    /// Used to give grid rows, per-class shuffles, and init sites their own
    /// streams that never overlap draws from one another.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut root = SplitMix64::new(seed);
        let a = root.next_u64();
        let mut mixed = SplitMix64::new(a ^ index.wrapping_mul(GOLDEN_GAMMA));
        SplitMix64::new(mixed.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) without modulo bias (rejection sampling).
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below: empty range");
        let n = n as u64;
        // Reject draws from the tail that would wrap unevenly.
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller (one draw per call; the pair's twin
    /// is discarded to keep the draw count independent of call pattern).
    pub fn next_normal(&mut self) -> f64 {
        // u in (0, 1] so the log is finite.
        let u = 1.0 - self.next_f64();
        let v = self.next_f64();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
