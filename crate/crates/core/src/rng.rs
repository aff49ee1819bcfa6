//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own generator from the run seed
//! plus a tag and an index (sequence id, fold id, epoch, ...). Streams never
//! depend on scheduling, so parallel and serial runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Mixes `seed`, a textual tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix64(seed ^ fnv1a(tag.as_bytes()));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, index))
}

/// Stream keyed by a string id, e.g. a sequence's `source_id`.
pub fn stream_for_id(seed: u64, tag: &str, id: &str) -> StreamRng {
    stream(seed, tag, fnv1a(id.as_bytes()))
}
