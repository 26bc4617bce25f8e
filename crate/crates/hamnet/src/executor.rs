use hamnet_core::training::BatchExecutor;
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "HAMNET_THREADS";

/// Runs per-sample work on a dedicated rayon pool. Results come back in
/// index order, so training output does not depend on the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads = None` uses all logical cores.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            if t == 0 {
                return Err(CliError::Usage(format!("{THREADS_ENV} must be at least 1")));
            }
            b = b.num_threads(t);
        }
        let pool = b.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
            ),
            Err(_) => None,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchExecutor for RayonExecutor {
    fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
