//! Thread-pool backed [`Parallelism`].

use anyhow::{Context as _, Result};
use metastep_core::exec::Parallelism;
use rayon::prelude::*;

/// Runs indexed work on a dedicated rayon pool. Results are collected in
/// index order, so outputs do not depend on the number of workers.
#[derive(Debug)]
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `jobs = 0` uses one worker per available core.
    pub fn new(jobs: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Parallelism for Pool {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
