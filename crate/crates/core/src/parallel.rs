//! Ordered data-parallel map.
//!
//! All batch-level parallelism in the crate goes through [`map_ordered`]:
//! results come back in input order and every reduction over them runs
//! sequentially afterwards, so parallel and sequential execution produce
//! bit-identical numbers. The `parallel` cargo feature gates rayon; the
//! runtime flag selects between the two paths when the feature is on
//! (training's reference deterministic mode forces the sequential path).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_ordered<T, U, F>(parallel: bool, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Indexed variant for producers that have no input slice.
pub fn map_ordered_indexed<U, F>(parallel: bool, count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..count).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..count).map(f).collect()
}
