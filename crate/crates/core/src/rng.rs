//! Reproducible random streams.
//!
//! Every chain owns a handful of independent ChaCha streams derived from one
//! root seed. Keys are mixed with SplitMix64, so a stream is addressable by
//! `(seed, chain, purpose)` and, for solver restarts, additionally by
//! `(iteration, call)`. Nothing about one stream depends on how many draws
//! were taken from another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamPurpose {
    /// Gaussian velocities (MALA) and momentum refreshes (HMC).
    Velocity = 1,
    /// Uniforms used to pick one element of a proposal set.
    Selection = 2,
    /// Metropolis–Hastings uniforms.
    Metropolis = 3,
    /// Initial guesses of the multistart Newton solver.
    Multistart = 4,
    /// Initial momentum draw.
    Initial = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a ChaCha8 generator from an arbitrary list of key words.
pub fn keyed_rng(words: &[u64]) -> ChaCha8Rng {
    let mut state = 0x6A09_E667_F3BC_C908_u64;
    for &w in words {
        let mut next = state ^ w;
        state = splitmix64(&mut next);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// The per-chain bundle of streams.
#[derive(Debug, Clone)]
pub struct ChainStreams {
    seed: u64,
    chain: u64,
    pub velocity: ChaCha8Rng,
    pub selection: ChaCha8Rng,
    pub metropolis: ChaCha8Rng,
    pub initial: ChaCha8Rng,
}

impl ChainStreams {
    pub fn new(seed: u64, chain: u64) -> Self {
        let mk = |p: StreamPurpose| keyed_rng(&[seed, chain, p as u64]);
        Self {
            seed,
            chain,
            velocity: mk(StreamPurpose::Velocity),
            selection: mk(StreamPurpose::Selection),
            metropolis: mk(StreamPurpose::Metropolis),
            initial: mk(StreamPurpose::Initial),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chain(&self) -> u64 {
        self.chain
    }

    /// Solver-private stream for the `call`-th projection solve of `iteration`.
    pub fn multistart(&self, iteration: u64, call: u64) -> ChaCha8Rng {
        keyed_rng(&[
            self.seed,
            self.chain,
            StreamPurpose::Multistart as u64,
            iteration,
            call,
        ])
    }
}
