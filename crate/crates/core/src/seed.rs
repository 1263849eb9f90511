//! Order-independent seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, shot index, stream
//! tag)`, so a shot produces the same samples no matter which worker
//! simulates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for shot `index` of a run with the given master seed.
#[inline]
pub fn derive(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Named sub-streams inside one shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Speckle(u32),
    Vacuum(u32),
    DetectorR,
    DetectorT,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Speckle(m) => 0x1000_0000 + m as u64,
            Stream::Vacuum(m) => 0x2000_0000 + m as u64,
            Stream::DetectorR => 0x3000_0001,
            Stream::DetectorT => 0x3000_0002,
        }
    }
}

/// Seed for dark frame `index`, disjoint from the shot seeds.
#[inline]
pub fn dark_seed(master: u64, index: u64) -> u64 {
    derive(mix64(master ^ 0xda4c_f4a3_e5d0_0001), index)
}

pub fn stream_seed(shot_seed: u64, stream: Stream) -> u64 {
    derive(shot_seed, stream.tag())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
