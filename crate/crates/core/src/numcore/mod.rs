//! Dense matrices, reverse-mode differentiation, Adam, and the seeded RNG.

mod adam;
mod matrix;
mod tape;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use tape::{
    activation, softmax, Activation, Gradients, Reduce, Tape, Var, DEFAULT_LEAKY_SLOPE,
};

use rand::SeedableRng;

/// The one generator used across the crate: ChaCha8 seeded from a `u64`.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-task from a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
