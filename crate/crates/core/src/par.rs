//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run sequentially. Either way the output order is the index order, so
//! results never depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
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

/// Map over a slice, preserving order.
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Run `f(block_index, block)` over consecutive `block_len` chunks of `data`.
pub fn for_each_block_mut<T, F>(data: &mut [T], block_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let block_len = block_len.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(block_len)
            .enumerate()
            .for_each(|(b, chunk)| f(b, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(block_len)
            .enumerate()
            .for_each(|(b, chunk)| f(b, chunk));
    }
}

/// Sum `f(i)` over `0..n` with a fixed block decomposition: blocks of
/// `BLOCK` terms are summed left to right, then block totals are summed
/// left to right. The association is independent of the thread count.
pub fn block_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const BLOCK: usize = 4096;
    let blocks = n.div_ceil(BLOCK);
    map_range(blocks, |b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Number of worker threads the parallel helpers will use.
pub fn worker_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn block_sum_matches_sequential_for_integers() {
        let s = block_sum(10_001, |i| i as f64);
        assert_eq!(s, (10_000.0 * 10_001.0) / 2.0);
    }

    #[test]
    fn blocks_cover_slice() {
        let mut v = vec![0usize; 103];
        for_each_block_mut(&mut v, 10, |b, chunk| {
            for x in chunk.iter_mut() {
                *x = b;
            }
        });
        assert_eq!(v[0], 0);
        assert_eq!(v[102], 10);
    }
}
