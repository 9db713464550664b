//! Seeded random streams.
//!
//! Every random quantity in a run comes from its own ChaCha8 stream whose key is
//! derived from `(seed, purpose, a, b, c)`. Draws for iteration `(epoch, iter,
//! sample)` therefore never depend on how many numbers other streams consumed,
//! nor on the order in which parallel workers run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Gumbel = 3,
    Finalize = 4,
    Subset = 5,
    Blobs = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> StreamRng {
    let words = [seed, purpose as u64, a, b, c];
    let mut key = [0u8; 32];
    let mut acc = 0u64;
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        for &w in &words {
            acc = splitmix64(acc ^ w.wrapping_add(lane as u64));
        }
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw strictly inside (0, 1): the midpoint of one of 2^52 equal cells.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64() >> 12;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
