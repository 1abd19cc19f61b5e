//! Counter-derived random streams.
//!
//! Every stochastic quantity in a run is drawn from a stream keyed by the run
//! seed plus a tuple of integer coordinates (purpose, chain, step, ...). Streams
//! never depend on execution order, so any partitioning of chains across
//! worker threads reproduces the same samples bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Keeping them distinct guarantees that, e.g., the chain
/// initialisation stream never collides with a per-step stream.
pub mod purpose {
    pub const CHAIN_INIT: u64 = 1;
    pub const REVERSE_STEP: u64 = 2;
    pub const ULA_CHAIN: u64 = 3;
    pub const MIXTURE_SAMPLE: u64 = 4;
    pub const SCORE_MSE: u64 = 5;
    pub const CHECK_POINTS: u64 = 6;
    pub const POINCARE: u64 = 7;
    pub const TARGET_LAYOUT: u64 = 8;
    pub const REFERENCE: u64 = 9;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a coordinate tuple into a 256-bit ChaCha key.
pub fn derive_key(seed: u64, coords: &[u64]) -> [u8; 32] {
    let mut state = splitmix64(seed);
    for &c in coords {
        state = splitmix64(state ^ splitmix64(c.wrapping_add(GOLDEN)));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        state = splitmix64(state.wrapping_add(i as u64));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Independent stream for `(seed, coords)`.
pub fn stream(seed: u64, coords: &[u64]) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(seed, coords))
}

/// A 64-bit child seed, for handing to APIs that take a plain seed.
pub fn child_seed(seed: u64, coords: &[u64]) -> u64 {
    let key = derive_key(seed, coords);
    u64::from_le_bytes(key[..8].try_into().expect("8-byte slice"))
}
