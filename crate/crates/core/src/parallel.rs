//! Worker-count control for the batch-parallel kernels.
//!
//! Kernels split work only over independent output items and combine
//! partial reductions in index order, so results are bitwise identical
//! for every worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "ARTSEG_THREADS";

static THREADS: AtomicUsize = AtomicUsize::new(0);

/// Reads `ARTSEG_THREADS`; unset, empty or `0` means single-threaded.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {s:?}"))),
        Err(_) => Ok(0),
    }
}

/// Sets the worker cap. `0` selects the single-threaded path.
///
/// The global rayon pool can only be built once per process; later calls
/// with a different positive count keep the first pool's size.
pub fn set_threads(n: usize) {
    if n > 0 {
        // Already-initialized pools are fine to reuse.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    THREADS.store(n, Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// `(0..n).map(f)` evaluated on the worker pool when one is configured.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if threads() == 0 || n < 2 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
