//! Order-preserving parallel map over sample indices.
//!
//! Per-sample work (gradients, saliency maps) is embarrassingly parallel;
//! reductions stay sequential in index order, so results are bit-identical
//! whether the work ran on one thread or many. The `parallel` feature gates
//! the rayon dependency; without it every mode degrades to the sequential
//! path. `TRUSTCNN_THREADS` caps the worker count at first use.

use std::sync::OnceLock;

/// Which execution path to use for per-sample work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

/// Thread cap from `TRUSTCNN_THREADS` (0 = let rayon decide). Read once.
pub fn thread_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("TRUSTCNN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0)
    })
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_cap())
            .build()
            .expect("rayon pool construction")
    })
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == ExecMode::Parallel && pool().current_num_threads() > 1 {
            return pool().install(|| (0..n).into_par_iter().map(f).collect());
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Like `map_indexed` for fallible work: the first error in index order wins,
/// so failures are deterministic too.
pub fn try_map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> crate::error::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::error::Result<T> + Sync + Send,
{
    map_indexed(mode, n, f).into_iter().collect()
}
