//! Data-parallel helpers. With the `parallel` feature these run on rayon;
//! without it (or with `workers == 1`) they degrade to plain iteration.
//! Output order always matches input order.

/// Maps `f` over `items`, using up to `workers` threads.
pub fn map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 && items.len() > 1 {
        use rayon::prelude::*;
        return with_pool(workers, || items.par_iter().map(&f).collect());
    }
    let _ = workers;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`.
pub fn map_range<R, F>(n: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 && n > 1 {
        use rayon::prelude::*;
        return with_pool(workers, || (0..n).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..n).map(f).collect()
}

/// `workers == 0` means the global pool.
#[cfg(feature = "parallel")]
fn with_pool<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    if workers == 0 || workers == rayon::current_num_threads() {
        return op();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(err) => {
            log::warn!("falling back to global pool: {err}");
            op()
        }
    }
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
