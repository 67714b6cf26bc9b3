//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output, so callers that reduce
//! the collected results sequentially get bit-identical answers with and
//! without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, collecting in input order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Map `f` over `0..n`, collecting in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
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

/// Fallible [`map`]; the first error in input order wins.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

/// Whether this build runs the helpers on a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
