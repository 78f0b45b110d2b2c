//! Named deterministic random streams.
//!
//! Every random draw in the crate comes from a stream addressed by the run
//! seed plus a list of tags (a salt naming the purpose, then indices such as
//! user id, round, or rollout). Streams are independent of scheduling: two
//! rollouts of the same prompt get the same bytes whether they are sampled
//! serially, in parallel, or in a different order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose salts for stream derivation. Distinct constants keep streams for
/// different subsystems disjoint even when their index tags collide.
pub mod salt {
    pub const WORLD_ITEMS: u64 = 0x01;
    pub const WORLD_USER: u64 = 0x02;
    pub const SPLIT: u64 = 0x03;
    pub const CANDIDATES: u64 = 0x04;
    pub const CANDIDATE_ORDER: u64 = 0x05;
    pub const ROLLOUT: u64 = 0x06;
    pub const INIT: u64 = 0x07;
    pub const SFT_BATCH: u64 = 0x08;
    pub const GRPO_PROMPTS: u64 = 0x09;
    pub const COT: u64 = 0x0a;
}

/// SplitMix64 step; the standard finalizer gives good avalanche behaviour,
/// so nearby tag values still yield unrelated streams.
pub fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a seed and tag list into a single 64-bit value.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed ^ 0x6a09e667f3bcc908;
    let mut acc = splitmix(&mut state);
    for &t in tags {
        state ^= t;
        acc ^= splitmix(&mut state);
    }
    acc
}

/// Derive the deterministic stream for `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = mix(seed, tags);
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit hash of a byte string (FNV-1a). Used for fixture keys and
/// feature hashing, where the value must not change across runs or platforms.
pub fn stable_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
