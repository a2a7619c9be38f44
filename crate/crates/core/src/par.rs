//! Data-parallel helpers with a sequential fallback.
//!
//! Every kernel in this crate parallelizes only over disjoint output
//! slices (rows of a matrix, images of a batch, kernel taps) and keeps
//! each slice's accumulation order fixed, so the `parallel` feature
//! changes wall-clock time but never the bits of any result.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to equally sized mutable chunks of `data`, passing the chunk index.
/// The final chunk may be shorter.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Compute `f(i)` for `i in 0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Run independent jobs with bounded parallelism. Output order matches
/// input order; `jobs` is a cap, not a requirement.
#[cfg(feature = "parallel")]
pub fn run_jobs<I, T, F>(inputs: Vec<I>, jobs: usize, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build();
    match pool {
        Ok(pool) => pool.install(|| inputs.into_par_iter().map(f).collect()),
        // Pool creation only fails under resource exhaustion; degrade to
        // the shared global pool rather than aborting the run.
        Err(_) => inputs.into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn run_jobs<I, T, F>(inputs: Vec<I>, _jobs: usize, f: F) -> Vec<T>
where
    F: Fn(I) -> T,
{
    inputs.into_iter().map(f).collect()
}
