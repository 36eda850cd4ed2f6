//! Deterministic seed derivation.
//!
//! Every random stream comes from one root seed:
//!
//! ```text
//! seed(root, purpose, index) = mix(mix(root ^ tag(purpose)) ^ index)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `tag` a fixed 64-bit constant
//! per [`Purpose`]. Streams are ChaCha8. Each optimizer step gets its own
//! [`Purpose::Step`] stream, which the step splits with [`fork`] into attack,
//! dropout and weight-ascent streams, always in that order. Regimes that
//! skip a stage still fork all three, so a degenerate regime (zero radius,
//! zero weight budget) replays the simpler one bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Shuffle,
    Attack,
    Dropout,
    Evaluation,
    Data,
    Step,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x494e_4954_0000_0001,
            Purpose::Shuffle => 0x5348_5546_0000_0002,
            Purpose::Attack => 0x4154_5441_0000_0003,
            Purpose::Dropout => 0x4452_4f50_0000_0004,
            Purpose::Evaluation => 0x4556_414c_0000_0005,
            Purpose::Data => 0x4441_5441_0000_0006,
            Purpose::Step => 0x5354_4550_0000_0007,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    mix(mix(root ^ purpose.tag()) ^ index)
}

pub fn rng_for(root: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}

/// Splits an independent child stream off `parent`, advancing it by one draw.
pub fn fork(parent: &mut dyn RngCore) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}
