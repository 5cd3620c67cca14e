//! Seed derivation and random draws shared by the scenario generator and the
//! state-evolution sampler.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Stream tags used when splitting the master seed.
pub mod tag {
    pub const ACTIVITY: u64 = 0x61637469;
    pub const CHANNEL: u64 = 0x6368616e;
    pub const PILOT: u64 = 0x70696c6f;
    pub const NOISE: u64 = 0x6e6f6973;
    pub const STATE_EVOLUTION: u64 = 0x73746576;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `master` together with an ordered list of tags into a child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child generator drawn from a parent stream.
pub fn child<R: Rng + ?Sized>(parent: &mut R) -> SimRng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}
