//! Switch between rayon and sequential execution for independent tasks.
//!
//! Reductions inside a task are always sequential, so outputs do not depend on
//! the schedule. The reproducible flag only removes the thread pool.

use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static REPRODUCIBLE: AtomicBool = AtomicBool::new(false);

/// Force sequential execution everywhere.
pub fn set_reproducible(on: bool) {
    REPRODUCIBLE.store(on, Ordering::SeqCst);
}

pub fn is_reproducible() -> bool {
    REPRODUCIBLE.load(Ordering::SeqCst)
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_reproducible() || n <= 1 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
