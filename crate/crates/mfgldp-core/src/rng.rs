//! Counter-style random numbers keyed on (seed, path, step).
//!
//! Every Gaussian increment is addressed by an explicit key, so a draw can be
//! regenerated in isolation: the generator seeds a ChaCha8 cipher with the
//! seed, selects the path as the cipher stream, and jumps the word position
//! to a four-word window reserved for the step. Sequential generation along a
//! path and random access by key produce bit-identical values, and no shared
//! state exists between paths, so any parallel schedule yields the same
//! numbers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Words of ChaCha output reserved per (path, step) key: two u64 draws.
const WORDS_PER_STEP: u128 = 4;

/// Standard normal draw addressed by (seed, path, step).
pub fn standard_normal(seed: u64, path: u64, step: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    let (a, b) = (rng.next_u64(), rng.next_u64());
    box_muller(a, b)
}

/// Generator pinned to one path, drawing steps sequentially but through the
/// same keyed windows as [`standard_normal`].
pub struct PathNormals {
    rng: ChaCha8Rng,
    next_step: u64,
}

impl PathNormals {
    /// Positions the generator at (seed, path, step 0).
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        PathNormals { rng, next_step: 0 }
    }

    /// Draws the normal for the next step along this path.
    pub fn next_normal(&mut self) -> f64 {
        self.rng.set_word_pos(self.next_step as u128 * WORDS_PER_STEP);
        self.next_step += 1;
        let (a, b) = (self.rng.next_u64(), self.rng.next_u64());
        box_muller(a, b)
    }
}

fn box_muller(a: u64, b: u64) -> f64 {
    // u1 in (0, 1], u2 in [0, 1); 53-bit mantissas.
    let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / 9007199254740992.0);
    let u2 = (b >> 11) as f64 * (1.0 / 9007199254740992.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// SplitMix64 mixing step, used to derive independent seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed, a purpose tag, and an index.
///
/// Distinct (tag, index) pairs map to distinct well-mixed seeds, so nested
/// experiments (per scenario, per N, per replication) draw from independent
/// streams without coordination.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed ^ 0xA076_1D64_78BD_642F) ^ tag) ^ index)
}
