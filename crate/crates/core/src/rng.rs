//! Named, index-addressable random substreams.
//!
//! Every random draw in the crate comes from a stream derived from a root seed,
//! a stream name and an index. Two consumers with different names never share
//! draws, so adding a consumer does not perturb any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used across the crate.
pub mod stream {
    pub const BOOTSTRAP: &str = "bootstrap";
    pub const GMM_INIT: &str = "gmm-init";
    pub const TIE_BREAK: &str = "tie-break";
    pub const NOISE: &str = "noise";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a 64-bit seed for `(root, name, index)`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    let a = splitmix64(root ^ fnv1a(name));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Independent generator for `(root, name, index)`.
pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, index))
}
