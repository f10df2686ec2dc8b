//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from
//! `(seed, purpose, index)`, so results never depend on the order in which
//! independent work units execute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialNoise = 1,
    PermutationBatch = 2,
    IndicatorPermutations = 3,
    Estimator = 4,
    Probe = 5,
    Data = 6,
    Synthetic = 7,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream keyed by `(seed, purpose, major, minor)`.
pub fn stream(seed: u64, purpose: Purpose, major: u64, minor: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(purpose as u64 ^ splitmix64(major)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(minor);
    rng
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
