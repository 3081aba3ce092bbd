//! File formats, the parallel training driver, evaluation reports and the
//! command-line front end for `pipesched-core`.

pub mod check;
pub mod config;
pub mod evaluate;
pub mod io;
pub mod train;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PIPESCHED_THREADS";

/// Sizes the global worker pool from `PIPESCHED_THREADS` when set. Returns
/// the thread count in effect.
pub fn init_threads() -> anyhow::Result<usize> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
        // a pool built earlier in this process stays in effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
