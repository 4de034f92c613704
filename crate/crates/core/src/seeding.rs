//! Per-replica random streams.
//!
//! Every replica gets its own ChaCha8 stream keyed by `(master_seed, index)`, so
//! results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Random stream for replica `index` under `master_seed`.
pub fn replica_rng(master_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Derives a sub-seed for a named stage of an experiment (e.g. one `x` cell of
/// a sweep) so that stages do not share streams.
pub fn stage_seed(master_seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ stage.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
