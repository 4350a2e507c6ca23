//! Counter-based random substreams.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, stream)`,
//! so records do not depend on how trials are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes an arbitrary list of tags into a 64-bit stream identifier.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter().fold(0x243f_6a88_85a3_08d3_u64, |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

/// Independent generator for one `(seed, stream)` pair.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for trial `trial` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, tag: &str, trial: u64) -> ChaCha8Rng {
    let tag_hash = tag.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    substream(seed, stream_id(&[tag_hash, trial]))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
