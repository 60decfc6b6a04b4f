//! Data-parallel building blocks with a sequential fallback.
//!
//! With the `parallel` feature (the default) the mapping functions fan out
//! over rayon's global pool; without it they run sequentially. Outputs are
//! collected in input order and all reductions happen on the caller's side
//! in a fixed order, so results are bit-identical with and without the
//! feature and independent of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by kernels that accumulate per-chunk statistics
/// (EM sufficient statistics, minibatch gradients). Fixed so that the
/// chunk boundaries — and therefore the summation tree — never depend
/// on the number of threads.
pub const STAT_CHUNK: usize = 1024;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order (sequential fallback).
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over an index range, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Map `f` over an index range, preserving order (sequential fallback).
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

/// Map `f` over fixed-size chunks of `items`, preserving chunk order.
/// Callers fold the returned per-chunk values sequentially.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> U + Sync + Send,
{
    items.par_chunks(chunk).map(f).collect()
}

/// Map `f` over fixed-size chunks of `items` (sequential fallback).
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    F: Fn(&[T]) -> U,
{
    items.chunks(chunk).map(f).collect()
}

/// Always-sequential variants. The benchmark suite uses these to compare
/// the rayon path against single-threaded execution on the same kernels.
pub mod seq {
    pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
    where
        F: Fn(&T) -> U,
    {
        items.iter().map(f).collect()
    }

    pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..count).map(f).collect()
    }

    pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
    where
        F: Fn(&[T]) -> U,
    {
        items.chunks(chunk).map(f).collect()
    }
}

/// True when the `parallel` feature is compiled in.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
