//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! a rayon pool; without it every helper runs sequentially. Results are
//! always returned in index order, so output never depends on scheduling.

/// Evaluate `f(0..n)` and collect the results in index order.
///
/// `workers == 0` uses the global pool; `workers == 1` runs inline.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match workers {
        0 => (0..n).into_par_iter().map(f).collect(),
        1 => (0..n).map(f).collect(),
        w => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not build a {w}-thread pool ({e}); running sequentially");
                (0..n).map(f).collect()
            }
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], workers: usize, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), workers, |i| f(&items[i]))
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let expect: Vec<usize> = (0..257).map(|i| i * i).collect();
        for w in [0, 1, 3, 8] {
            assert_eq!(map_indexed(257, w, |i| i * i), expect);
        }
    }
}
