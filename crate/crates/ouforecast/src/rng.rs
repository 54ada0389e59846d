//! Seed derivation for reproducible Monte Carlo.
//!
//! Every random draw in this crate comes from a ChaCha stream keyed by a
//! master seed plus a path of integer ids (trajectory index, layer, step,
//! ...). Work scheduled across any number of threads therefore sees the
//! same noise, and results are byte-identical regardless of thread count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer; full-period bijective mixing of a 64-bit word.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of stream ids.
pub fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x6a09_e667_f3bc_c909);
    for &id in ids {
        h = mix64(h ^ mix64(id.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

/// A generator positioned on the substream named by `ids`.
pub fn substream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, ids))
}

/// Draw `dim` i.i.d. standard normal variates.
pub fn standard_normals(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}
