//! Seed derivation and random streams.
//!
//! Every random quantity in the crate is a pure function of a 64-bit seed. The
//! expansion is fixed and platform independent:
//!
//! * [`mix`] is the SplitMix64 finalizer.
//! * [`derive`] folds a list of coordinates into a child seed:
//!   `h0 = mix(master ^ 0x5EED_5EED_5EED_5EED)`, then `h <- mix(h ^ mix(c + GOLDEN))`
//!   for each coordinate `c` in order.
//! * [`stream`] turns a seed into a Xoshiro256++ generator seeded through SplitMix64.
//! * [`hash_at`] gives the value attached to position `i` of a seed's hash stream,
//!   used where a draw must be addressable by row index (countsketch maps,
//!   streamed data sets).

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SketchRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const DOMAIN: u64 = 0x5EED_5EED_5EED_5EED;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the coordinate path `coords` below `master`.
pub fn derive(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix(master ^ DOMAIN), |h, &c| {
        mix(h ^ mix(c.wrapping_add(GOLDEN)))
    })
}

/// Seed for one Monte Carlo replication. Distinct values of any coordinate give
/// distinct streams.
pub fn replication_seed(master: u64, replication: u64, scheme: u64, m: u64, j: u64) -> u64 {
    derive(master, &[replication, scheme, m, j])
}

pub fn stream(seed: u64) -> SketchRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// The `index`-th value of the hash stream of `seed`.
#[inline]
pub fn hash_at(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ DOMAIN) ^ index.wrapping_mul(GOLDEN))
}

/// Maps a uniform 64-bit word to `0..bound` by the multiply-high method.
#[inline]
pub fn below(word: u64, bound: u64) -> u64 {
    ((word as u128 * bound as u128) >> 64) as u64
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The first `k` entries of a uniformly random permutation of `0..n`, by a
/// partial Fisher-Yates shuffle that only stores displaced positions.
pub fn sample_without_replacement(rng: &mut SketchRng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct items from {n}");
    let mut displaced: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::with_capacity(2 * k);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = i + rng.random_range(0..n - i);
        let vi = *displaced.get(&i).unwrap_or(&i);
        let vj = *displaced.get(&j).unwrap_or(&j);
        out.push(vj);
        displaced.insert(j, vi);
    }
    out
}

/// A uniformly random permutation of `0..n`.
pub fn permutation(rng: &mut SketchRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}
