//! Named, independent random streams.
//!
//! Every source of randomness in a run draws from its own stream so that
//! enabling one feature (say, probabilistic preconditioner updates) never
//! shifts the numbers seen by another (say, the gradient noise).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a bijective 64-bit mix.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    mix64(mix64(parent) ^ mix64(label.wrapping_add(0xA076_1D64_78BD_642F)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise = 1,
    Rademacher = 2,
    Anchor = 3,
    PrecondSkip = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream as u64))
}

/// The four streams used by one optimizer run.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub noise: ChaCha8Rng,
    pub rademacher: ChaCha8Rng,
    pub anchor: ChaCha8Rng,
    pub precond_skip: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        RunStreams {
            noise: stream_rng(seed, Stream::Noise),
            rademacher: stream_rng(seed, Stream::Rademacher),
            anchor: stream_rng(seed, Stream::Anchor),
            precond_skip: stream_rng(seed, Stream::PrecondSkip),
        }
    }

    /// Seed for the next stochastic oracle call.
    pub fn next_sample_seed(&mut self) -> u64 {
        self.noise.next_u64()
    }
}
