//! The single random number generator used throughout the crate.
//!
//! Every stochastic operation takes an explicit `&mut SimRng`. ChaCha8 has a
//! fixed, platform-independent output stream, so a `(seed, stream)` pair pins
//! down a trace bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used for instance generation (MDP tables, features, graphs).
pub const INSTANCE_STREAM: u64 = 0;
/// Stream used for trajectory sampling inside a trial.
pub const TRAJECTORY_STREAM: u64 = 1;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn rng_for_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of trial `t` under master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    master ^ trial
}
