//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by a base seed
//! and a tuple of integer tags (client id, round, epoch, item index, ...). This
//! keeps results independent of execution order and thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tag {
    pub const PARTITION: u64 = 0x7061_7274;
    pub const PROXY_SPLIT: u64 = 0x7370_6c74;
    pub const CORRUPT: u64 = 0x636f_7272;
    pub const INIT: u64 = 0x696e_6974;
    pub const CLIENT: u64 = 0x636c_6e74;
    pub const CLIENT_AUG: u64 = 0x6361_7567;
    pub const DART_SHUFFLE: u64 = 0x6473_6866;
    pub const DART_TRAIN_AUG: u64 = 0x6474_6175;
    pub const DART_VAL_AUG: u64 = 0x6476_6175;
    pub const SYNTH: u64 = 0x7379_6e74;
    pub const SERVER_DART: u64 = 0x7364_7274;
    pub const EVAL_DART: u64 = 0x6564_7274;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`. Order of tags matters.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}
