//! Job execution strategy.
//!
//! The experiment protocol fans out into independent (repeat, fold) jobs, so
//! the crate runs them with rayon when the `parallel` feature is on (the
//! default) and falls back to a plain sequential loop otherwise. Both paths
//! preserve input order in the output vector, which keeps archived results
//! byte-identical across strategies.

/// Map `f` over `jobs`, in parallel when built with the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn map_jobs<T, U, F>(jobs: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    jobs.into_par_iter().map(f).collect()
}

/// Map `f` over `jobs` sequentially (the `parallel` feature is off).
#[cfg(not(feature = "parallel"))]
pub fn map_jobs<T, U, F>(jobs: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    jobs.into_iter().map(f).collect()
}

/// Always-sequential variant, kept available under either feature so the
/// bench suite can compare strategies in one build.
pub fn map_jobs_seq<T, U, F>(jobs: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    jobs.into_iter().map(f).collect()
}

/// Cap the rayon pool for the duration of `f`. `threads = 0` means "leave the
/// global default alone". Without the `parallel` feature this just calls `f`.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build {threads}-thread pool ({e}); using default");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_jobs_preserves_order() {
        let jobs: Vec<u64> = (0..100).collect();
        let out = map_jobs(jobs.clone(), |x| x * x);
        let expect: Vec<u64> = jobs.iter().map(|x| x * x).collect();
        assert_eq!(out, expect);
        assert_eq!(map_jobs_seq(jobs, |x| x * x), expect);
    }
}
