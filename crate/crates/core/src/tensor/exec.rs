use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Worker configuration for the compute kernels.
///
/// Every kernel partitions its output into disjoint chunks and computes each
/// chunk with the same sequential code, so results do not depend on the
/// worker count.
#[derive(Clone)]
pub struct Exec {
    workers: usize,
    pool: Option<Arc<ThreadPool>>,
}

impl Exec {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::usage("worker count must be at least 1"));
        }
        if workers == 1 {
            return Ok(Self::single());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("cxrb-worker-{i}"))
            .build()
            .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self {
            workers,
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn single() -> Self {
        Self { workers: 1, pool: None }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Calls `f(index, chunk)` for every `chunk`-sized slice of `out`.
    pub(crate) fn chunks<T, F>(&self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk == 0 || out.is_empty() {
            return;
        }
        match &self.pool {
            Some(pool) => pool.install(|| out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c))),
            None => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        }
    }

    /// Like [`Exec::chunks`] but walks two outputs in lockstep.
    pub(crate) fn chunks2<A, B, F>(&self, a: &mut [A], ca: usize, b: &mut [B], cb: usize, f: F)
    where
        A: Send,
        B: Send,
        F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
    {
        if ca == 0 || cb == 0 || a.is_empty() {
            return;
        }
        match &self.pool {
            Some(pool) => pool.install(|| {
                a.par_chunks_mut(ca)
                    .zip(b.par_chunks_mut(cb))
                    .enumerate()
                    .for_each(|(i, (x, y))| f(i, x, y))
            }),
            None => a
                .chunks_mut(ca)
                .zip(b.chunks_mut(cb))
                .enumerate()
                .for_each(|(i, (x, y))| f(i, x, y)),
        }
    }
}

impl Default for Exec {
    fn default() -> Self {
        Self::single()
    }
}

impl fmt::Debug for Exec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Exec").field("workers", &self.workers).finish()
    }
}
