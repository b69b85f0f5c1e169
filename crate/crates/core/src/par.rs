//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel site in this crate is a pure map over independent items
//! collected in index order, so results are bit-identical with and without
//! the `parallel` feature and for any thread count. Never use these for
//! floating-point reductions; reduce sequentially over the collected vector.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over `0..n` in parallel (feature `parallel`) or sequentially.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Map over a slice in parallel (feature `parallel`) or sequentially.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
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

/// Always-sequential map over `0..n`; the benchmark baseline.
pub fn seq_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let par = map_indices(100, |i| i * i);
        let seq = seq_map_indices(100, |i| i * i);
        assert_eq!(par, seq);
    }
}
