//! Seeded random streams.
//!
//! Work item `i` is assigned to chunk `i / CHUNK_LEN`; chunk `c` draws from
//! ChaCha8 seeded with `seed_from_u64(seed)` and switched to stream `c`.
//! Items inside a chunk are drawn sequentially, so output depends only on
//! the seed and never on how chunks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CHUNK_LEN: usize = 4096;

pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// `(chunk index, item range)` covering `0..count`.
pub fn chunks(count: usize) -> impl Iterator<Item = (u64, std::ops::Range<usize>)> {
    (0..count.div_ceil(CHUNK_LEN)).map(move |c| {
        let start = c * CHUNK_LEN;
        (c as u64, start..(start + CHUNK_LEN).min(count))
    })
}
