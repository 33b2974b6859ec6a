//! Portable pseudo-random permutation.
//!
//! A 64-bit linear congruential generator (multiplier 6364136223846793005,
//! increment 1442695040888963407, state initialised to the seed) drives a
//! descending Fisher–Yates shuffle. Each draw advances the state and uses
//! the high 32 bits (`state >> 32`); the swap index for position `i` is
//! `draw % (i + 1)`. Any language with wrapping 64-bit integer arithmetic
//! reproduces the same permutations.

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const INCREMENT: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform-ish index in `0..bound` (modulo reduction).
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u32() as u64 % bound as u64) as usize
    }
}

/// Permutation of `0..n` under `seed`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, seed);
    idx
}

pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = Lcg::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}
