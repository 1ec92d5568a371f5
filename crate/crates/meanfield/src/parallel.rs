//! Order-preserving indexed map, parallel when the `parallel` feature is on.
//!
//! Every data-parallel sweep in the crate (replica batches, quasipotential
//! pair matrices, multi-starts) goes through [`par_map`], which returns
//! results in input order regardless of scheduling, so outputs are
//! bit-identical with or without the feature and for any thread count.
//! [`seq_map`] is always available as the explicit sequential baseline for
//! benches.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the returned vector.
#[cfg(feature = "parallel")]
pub fn par_map<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Sequential fallback with the identical contract.
#[cfg(not(feature = "parallel"))]
pub fn par_map<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    seq_map(n, f)
}

/// Sequential baseline, present under both feature configurations.
pub fn seq_map<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
