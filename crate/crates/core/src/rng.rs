//! Counter-based random streams.
//!
//! Every random quantity is drawn from a stream identified by
//! `(seed, namespace, counter)`. Turning one feature on or off never shifts
//! the draws seen by another, and a given iteration's batch does not depend
//! on how many draws earlier iterations consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named RNG namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Dropout = 3,
    ResetCoin = 4,
    Perturbation = 5,
    Data = 6,
    Noise = 7,
    Split = 8,
    Trajectory = 9,
    Diagnostics = 10,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a namespace into a new 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    splitmix64(seed ^ splitmix64(stream as u64))
}

/// RNG for `(seed, stream, counter)`.
pub fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    rng.set_stream(counter);
    rng
}
