//! Reproducible per-replicate RNG streams.
//!
//! Replicate `i` of an experiment with master seed `s` always sees the same
//! ChaCha stream, independent of how replicates are scheduled across workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// RNG for one replicate, derived from `(master_seed, replicate)`.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate.wrapping_add(1));
    rng
}
