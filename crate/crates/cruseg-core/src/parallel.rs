//! Thread-pool configuration.
//!
//! All internal parallelism is rayon over disjoint output slices, so results
//! are bit-identical regardless of the thread count; the cap only trades
//! speed.

use std::sync::OnceLock;

static CONFIGURED: OnceLock<usize> = OnceLock::new();

/// Cap the global rayon pool at `threads` (0 means "number of cores").
///
/// First call wins; later calls (and pools already started by rayon itself)
/// leave the pool as-is. Returns the effective thread count.
pub fn configure_threads(threads: usize) -> usize {
    *CONFIGURED.get_or_init(|| {
        if threads > 0 {
            // An error here means a global pool already exists; keep it.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
        rayon::current_num_threads()
    })
}

/// Read the `CRUSEG_THREADS` cap from the environment and apply it.
///
/// Unset, empty, or unparsable values fall back to all cores.
pub fn configure_threads_from_env() -> usize {
    let requested = std::env::var("CRUSEG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    configure_threads(requested)
}
