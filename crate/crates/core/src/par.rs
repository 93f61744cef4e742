//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool
//! sized by the caller's concurrency limit. Without it every helper runs
//! sequentially. Results are always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items` with at most `concurrency` workers, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if concurrency > 1 && items.len() > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new()
                .num_threads(concurrency)
                .build()
            {
                return pool
                    .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
            }
        }
    }
    let _ = concurrency;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Like [`map_ordered`] over an index range.
pub fn map_range<R, F>(n: usize, concurrency: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_ordered(&idx, concurrency, |_, &i| f(i))
}

/// Default worker count: available hardware threads.
pub fn default_concurrency() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Whether this build runs helpers on a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map_ordered(&xs, 1, |i, x| x * 3 + i as u64);
        let par = map_ordered(&xs, 8, |i, x| x * 3 + i as u64);
        assert_eq!(seq, par);
        assert_eq!(map_range(4, 3, |i| i * i), vec![0, 1, 4, 9]);
    }
}
