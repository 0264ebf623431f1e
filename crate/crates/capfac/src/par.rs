//! Parallel scan helpers with a sequential fallback.
//!
//! Every scan in this crate reduces deterministically: `find_map_first`
//! returns the match at the lowest index and `max_by_index` breaks value
//! ties toward the lowest index, so results are identical with and without
//! the `parallel` feature and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn find_map_first<R, F>(count: usize, f: F) -> Option<R>
where
    R: Send,
    F: Fn(usize) -> Option<R> + Sync + Send,
{
    (0..count).into_par_iter().find_map_first(f)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn find_map_first<R, F>(count: usize, f: F) -> Option<R>
where
    F: Fn(usize) -> Option<R>,
{
    (0..count).find_map(f)
}

/// Maximum of `f(i)` over `0..count` with ties going to the smallest index.
/// `None` entries are skipped.
#[cfg(feature = "parallel")]
pub(crate) fn max_by_index<V, F>(count: usize, f: F) -> Option<(usize, V)>
where
    V: Ord + Send,
    F: Fn(usize) -> Option<V> + Sync + Send,
{
    (0..count)
        .into_par_iter()
        .filter_map(|i| f(i).map(|v| (i, v)))
        .reduce_with(|a, b| pick_max(a, b))
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn max_by_index<V, F>(count: usize, f: F) -> Option<(usize, V)>
where
    V: Ord,
    F: Fn(usize) -> Option<V>,
{
    (0..count)
        .filter_map(|i| f(i).map(|v| (i, v)))
        .fold(None, |best, next| match best {
            None => Some(next),
            Some(cur) => Some(pick_max(cur, next)),
        })
}

fn pick_max<V: Ord>(a: (usize, V), b: (usize, V)) -> (usize, V) {
    // Strictly greater value wins; on equal values the lower index wins.
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

/// Maps chunks `0..count` and folds the results with `combine`.
/// `combine` must be associative and commutative-safe for index order
/// (all uses here merge counters and min-index examples).
#[cfg(feature = "parallel")]
pub(crate) fn map_reduce<T, F, C>(count: usize, map: F, combine: C) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(map).reduce_with(combine)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_reduce<T, F, C>(count: usize, map: F, combine: C) -> Option<T>
where
    F: Fn(usize) -> T,
    C: Fn(T, T) -> T,
{
    (0..count).map(map).reduce(combine)
}
