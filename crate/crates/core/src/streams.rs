//! Named random streams derived from one seed, so each source of randomness can change
//! without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: u64 = 0;
pub const DATA_ORDER: u64 = 1;
pub const DROPOUT: u64 = 2;
pub const NEGATIVES: u64 = 3;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
