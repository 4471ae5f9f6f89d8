//! Seeded pseudo-random streams.
//!
//! Every random draw in the crate comes from xoshiro256++ seeded through
//! SplitMix64 (`seed_from_u64`), so a `u64` seed fully determines the
//! stream on every platform.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

/// Stream tags keep independent consumers of one user seed decorrelated.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Init = 0x1d4a_11b7_9e37_79b9,
    Shuffle = 0x5a5f_3c6e_c1f0_2d83,
    Synth = 0x2b99_7e15_6c4d_90a1,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    Rng::seed_from_u64(seed ^ which as u64)
}
