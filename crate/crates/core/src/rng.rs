//! Seeded generator and stream derivation shared by every randomized operation.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used everywhere randomness is needed.
pub type Prng = Xoshiro256PlusPlus;

/// Per-operation stream constants. A stream is derived as `seed ^ constant`,
/// so two operations sharing a seed never share a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 0x5851_f42d_4c95_7f2d,
    Bootstrap = 0x2545_f491_4f6c_dd1d,
    SynthTrain = 0x9e37_79b9_7f4a_7c15,
    SynthTarget = 0xbf58_476d_1ce4_e5b9,
    SingleModel = 0x94d0_49bb_1331_11eb,
}

pub fn stream(seed: u64, which: Stream) -> Prng {
    Prng::seed_from_u64(seed ^ which as u64)
}

/// SplitMix64 finalizer: a fixed bijective 64-bit mixing function.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
