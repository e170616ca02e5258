//! Worker-pool abstraction: data-parallel map with a sequential fallback.
//!
//! With the default `parallel` feature, [`map_ordered`] fans work out over
//! rayon; without it, it degrades to a plain sequential map. Results are
//! always collected in input order, so every caller observes bit-identical
//! outputs regardless of feature flags or worker count.
//!
//! The `SAFLBENCH_THREADS` environment variable caps the rayon pool size; it
//! can change scheduling, never results.

/// Name of the environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "SAFLBENCH_THREADS";

/// Map `f` over `items`, collecting results in input order.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, collecting results in input order.
#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference map; the benchmark baseline.
pub fn map_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Run `job` inside a worker pool honoring `SAFLBENCH_THREADS` when the
/// variable is set (and the `parallel` feature is on); otherwise run it
/// directly.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<R: Send>(job: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool construction cannot fail for positive sizes")
            .install(job),
        None => job(),
    }
}

/// Run `job` directly; the sequential build ignores the thread cap.
#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<R>(job: impl FnOnce() -> R) -> R {
    job()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree_in_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761).rotate_left(13);
        assert_eq!(map_ordered(&items, f), map_serial(&items, f));
    }

    #[test]
    fn thread_cap_runs_the_job() {
        let out = with_thread_cap(|| map_ordered(&[1, 2, 3], |x| x + 1));
        assert_eq!(out, vec![2, 3, 4]);
    }
}
