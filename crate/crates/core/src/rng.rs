//! Counter-based random streams.
//!
//! Every path gets its own ChaCha8 stream: the key is derived from the master
//! seed and a purpose tag, the stream id is the path index, and draws advance
//! the block counter. Results therefore do not depend on which worker samples
//! which path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Increments of leafwise Brownian paths.
pub const PURPOSE_INCREMENTS: u64 = 0x7061_7468;
/// Draws of initial points from an initial law.
pub const PURPOSE_INITIAL: u64 = 0x696e_6974;
/// Random directions and test vectors in diagnostics.
pub const PURPOSE_DIAGNOSTIC: u64 = 0x6469_6167;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `(master_seed, purpose, index)`.
pub fn stream(master_seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = master_seed ^ splitmix64(purpose);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Increment stream of path `path_index`.
pub fn path_stream(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    stream(master_seed, PURPOSE_INCREMENTS, path_index)
}
