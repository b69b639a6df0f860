//! Named random sub-streams derived from a single run seed.
//!
//! Every stage draws from its own ChaCha stream, keyed by a stage name, so
//! changing how many values one stage consumes never shifts another stage's
//! draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// Returns the stream for `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

// FNV-1a over the stage name.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
