//! Thin data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run plain sequential loops. Every helper hands each output chunk to
//! exactly one closure invocation and the chunk boundaries never depend on
//! the thread count, so results are bit-identical for any pool size,
//! including the sequential build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to disjoint mutable chunks of `data`, passing the chunk index.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Apply `f` to each index in `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Run `f` over index ranges `[start, end)` split into fixed-size blocks.
pub fn for_each_block<F>(n: usize, block: usize, f: F)
where
    F: Fn(usize, usize) + Sync + Send,
{
    assert!(block > 0);
    let nblocks = n.div_ceil(block);
    #[cfg(feature = "parallel")]
    (0..nblocks)
        .into_par_iter()
        .for_each(|i| f(i * block, ((i + 1) * block).min(n)));
    #[cfg(not(feature = "parallel"))]
    (0..nblocks).for_each(|i| f(i * block, ((i + 1) * block).min(n)));
}

/// Number of worker threads the current build/pool will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
