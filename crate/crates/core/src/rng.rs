//! Counter-style random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose key is a hash
//! of `(seed, step, tag, lineage id)`, so no particle's randomness depends on
//! any other particle or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kernel tags. Populations are folded in with [`tag`].
pub const KERNEL_INIT: u64 = 1;
pub const KERNEL_SDE: u64 = 2;
pub const KERNEL_BRANCH: u64 = 3;

pub fn tag(kernel: u64, population: u64) -> u64 {
    kernel << 8 | population
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    let mut state = 0x2545_F491_4F6C_DD1D;
    let mut acc = 0u64;
    for &w in words {
        state ^= w;
        acc = splitmix64(&mut state) ^ acc.rotate_left(17);
    }
    acc
}

/// The stream for one particle in one kernel invocation.
pub fn stream(seed: u64, step: u64, tag: u64, lineage: u64) -> ChaCha8Rng {
    let mut state = mix(&[seed, step, tag, lineage]);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Lineage id of the `ordinal`-th child spawned by `parent` at `step`.
pub fn child_id(parent: u64, step: u64, ordinal: u64) -> u64 {
    mix(&[0xC41D, parent, step, ordinal])
}
