//! Worker-pool setup. `EIDOSLAB_THREADS` caps parallelism; results are
//! independent of the worker count because every parallel reduction merges
//! in a fixed order.

use std::sync::OnceLock;

static POOL_INIT: OnceLock<()> = OnceLock::new();

/// Install the global worker pool once, honoring `EIDOSLAB_THREADS`.
/// Safe to call from every entry point; later calls are no-ops.
pub fn init_thread_pool() {
    POOL_INIT.get_or_init(|| {
        if let Some(n) = configured_threads() {
            // Errors only if a global pool already exists, which is fine.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    });
}

fn configured_threads() -> Option<usize> {
    let raw = std::env::var("EIDOSLAB_THREADS").ok()?;
    raw.trim().parse::<usize>().ok().filter(|n| *n > 0)
}
