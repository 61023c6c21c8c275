//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` built here, so a
//! run is a pure function of its seed. Distinct consumers get distinct
//! ChaCha streams of the same key.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream ids for the independent consumers of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batches = 2,
    Injection = 3,
    Synth = 4,
    GradCheck = 5,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// RNG for one scoring round: key `seed ^ round`, on a stream reserved for scoring.
pub fn round_stream(seed: u64, round: usize) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ round as u64);
    rng.set_stream(0x5c0e);
    rng
}
