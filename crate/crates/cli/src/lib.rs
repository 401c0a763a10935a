//! Experiment driver around the `msfem` solver library.
//!
//! The binary reads one TOML config per experiment, runs the configured
//! methods against a shared reference, and leaves plot-ready CSV files plus a
//! manifest in the output directory.  The pieces live here as a library so
//! integration tests can drive them without spawning processes.

pub mod config;
pub mod runner;

use std::path::PathBuf;

/// Reference cache directory: explicit flag, then the environment, then a
/// `cache/` directory next to the experiment outputs.
pub fn resolve_cache_dir(flag: Option<PathBuf>, output: &std::path::Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("MSFEM_CACHE_DIR").map(PathBuf::from))
        .unwrap_or_else(|| output.join("cache"))
}
