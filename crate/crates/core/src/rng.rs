//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes the root seed is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Catalog,
    Corpus,
    Init,
    Batching,
    GradCheck,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Catalog => 0x6361_7461_6c6f_6701,
            Stream::Corpus => 0x636f_7270_7573_0002,
            Stream::Init => 0x696e_6974_0000_0003,
            Stream::Batching => 0x6261_7463_6800_0004,
            Stream::GradCheck => 0x6772_6164_0000_0005,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    mix64(root ^ mix64(stream.tag()))
}

/// Seed for record `index` of a corpus generated from `seed`. Records are
/// independent of generation order.
pub fn record_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Opaque snapshot of a generator: key, stream id and word position.
pub fn rng_state_bytes(rng: &Rng) -> [u8; 56] {
    let mut out = [0u8; 56];
    out[..32].copy_from_slice(&rng.get_seed());
    out[32..40].copy_from_slice(&rng.get_stream().to_le_bytes());
    out[40..].copy_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn rng_from_state_bytes(bytes: &[u8]) -> Option<Rng> {
    if bytes.len() != 56 {
        return None;
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let stream = u64::from_le_bytes(bytes[32..40].try_into().ok()?);
    let pos = u128::from_le_bytes(bytes[40..].try_into().ok()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Some(rng)
}
