//! Reproducible noise streams.
//!
//! Replication `r` of a run with master seed `s` draws from ChaCha20 (20
//! rounds, RFC 8439 block function) keyed from the 64-bit value `s ⊕ r`
//! using the PCG32 expansion of `rand_core::SeedableRng::seed_from_u64`.
//! Gaussian variates use the ziggurat sampler of `rand_distr::StandardNormal`.
//! Streams therefore depend only on `(s, r)`, never on scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub fn replication_rng(master_seed: u64, replication: usize) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(master_seed ^ replication as u64)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `truth + σ z` with `z` from replication `r`'s stream.
pub fn noisy_response(truth: &DVector<f64>, sigma: f64, master_seed: u64, replication: usize) -> DVector<f64> {
    let mut rng = replication_rng(master_seed, replication);
    truth + sigma * standard_normal_vector(&mut rng, truth.len())
}

/// Run `f` on replications `0..reps` in parallel and return the outputs in
/// replication order.
///
/// `f` receives the replication index and its own generator; everything a
/// replication draws must come from that generator.
pub fn replicate<T, F>(reps: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha20Rng) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(master_seed, r);
            f(r, &mut rng)
        })
        .collect::<Vec<Result<T>>>()
        .into_iter()
        .collect()
}

pub(crate) fn check_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(Error::InvalidInput(format!("need at least {min} replications, got {reps}")));
    }
    Ok(())
}
