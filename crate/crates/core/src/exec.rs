//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature and `parallelism > 1` the items run on a
//! dedicated rayon pool of that size; otherwise they run in order on the
//! calling thread. Results are identical either way.

/// True when this build can run work in parallel.
pub const PARALLEL_ENABLED: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        // Thread creation can fail under tight limits; fall back quietly.
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], _parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Worker count to use when none is configured.
pub fn default_parallelism() -> usize {
    if PARALLEL_ENABLED {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        1
    }
}
