//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the identical closures sequentially. Every helper returns results
//! in index order, so both builds produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Calls `f(chunk_index, chunk)` for consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, piece)| f(c, piece));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, piece)| f(c, piece));
    }
}

/// Updates every element with `f(index, &mut value)` and returns the maximum
/// of the updated values (or `f64::NEG_INFINITY` for an empty slice).
pub fn update_and_max<F>(data: &mut [f64], f: F) -> f64
where
    F: Fn(usize, &mut f64) + Sync + Send,
{
    const CHUNK: usize = 2048;
    let fold = |(c, piece): (usize, &mut [f64])| {
        let base = c * CHUNK;
        let mut best = f64::NEG_INFINITY;
        for (o, v) in piece.iter_mut().enumerate() {
            f(base + o, v);
            if *v > best {
                best = *v;
            }
        }
        best
    };
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(CHUNK)
            .enumerate()
            .map(fold)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(CHUNK)
            .enumerate()
            .map(fold)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Whether this build dispatches to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
