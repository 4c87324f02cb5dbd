//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on rayon; without it
//! they run sequentially. Results are collected in input order either way,
//! so callers get identical output regardless of scheduling. The
//! `SCPVERIFY_THREADS` environment variable caps the worker count.

/// Map over indexed items, preserving input order in the output.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        maybe_init_pool();
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Map over a slice, preserving input order in the output.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        maybe_init_pool();
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Worker count the parallel maps will use.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        maybe_init_pool();
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(feature = "parallel")]
fn maybe_init_pool() {
    use std::sync::Once;
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        if let Ok(v) = std::env::var("SCPVERIFY_THREADS") {
            if let Ok(nt) = v.parse::<usize>() {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(nt.max(1))
                    .build_global();
            }
        }
    });
}
