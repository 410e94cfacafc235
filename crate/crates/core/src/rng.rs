//! Seeded, counter-keyed random streams.
//!
//! Every consumer derives its generator from `(seed, key...)` so results do not
//! depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seeded from `seed` and positioned on the stream selected by `keys`.
pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let stream = keys
        .iter()
        .fold(0x5EED_u64, |acc, &k| splitmix(acc ^ splitmix(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for `(seed, keys)`, for components that take a plain seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}
