//! Configuration-driven experiment harness: data generation, training,
//! parameter sweeps, the gating ablation and gradient verification.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod stats;

pub use error::{CliError, CliResult};

/// Environment variable that caps the worker pool.
pub const THREADS_ENV: &str = "SSM_LAB_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`], defaulting to the
/// machine parallelism.
pub fn configure_pool() -> CliResult<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    // A second call (as in tests) finds the pool already built; that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
