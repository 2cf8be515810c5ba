//! Seeded random streams.
//!
//! Every replication gets the generator `ChaCha8(seed + replication)`; within a
//! replication, independent sources (per-class arrivals, per-class services,
//! Brownian increments) use distinct ChaCha streams so that changing one
//! source never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, replication: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(replication));
    rng.set_stream(stream);
    rng
}

/// A uniform draw in `(0, 1]`, safe to pass to `ln`.
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Description of the normal sampler, recorded in run metadata.
pub const NORMAL_SAMPLER: &str = "ziggurat (rand_distr::StandardNormal) on ChaCha8 streams";
