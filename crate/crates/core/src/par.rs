//! Data-parallel helpers that fall back to sequential iteration when the
//! `parallel` feature is disabled. Output order never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every element with its index, collecting results in order.
pub(crate) fn map_indexed_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items
        .par_iter_mut()
        .enumerate()
        .map(|(i, t)| f(i, t))
        .collect();
    #[cfg(not(feature = "parallel"))]
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Evaluates `f(0..n)` in order.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}
