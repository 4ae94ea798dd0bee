pub mod diag;
pub mod eval;
pub mod gen;
pub mod refine;
pub mod replay;
pub mod report;
pub mod run_dir;
pub mod train;

use crate::error::{CliError, CliResult};

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Data(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Shortest round-trip decimal form, so CSV cells are stable across runs.
pub fn num(v: f64) -> String {
    format!("{v}")
}
