//! Deterministic block-parallel replication runner.
//!
//! Replications are cut into fixed-size blocks. Blocks run on a rayon pool
//! and their partial results are merged in block order, so the floating-point
//! result is the same for any number of workers.

use std::ops::Range;

use rayon::prelude::*;

use crate::stats::Merge;

pub const DEFAULT_BLOCK: u64 = 2048;

#[derive(Debug)]
pub struct Pool {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Pool {
    /// `workers = 0` uses all available cores; `1` runs inline.
    pub fn new(workers: usize) -> Self {
        let workers = if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        };
        let pool = (workers > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool")
        });
        Self { workers, pool }
    }

    pub fn serial() -> Self {
        Self::new(1)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f` over `[0, n)` in blocks of `block` and returns the per-block
    /// outputs in block order.
    pub fn map_blocks<T, F>(&self, n: u64, block: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<u64>) -> T + Sync,
    {
        let block = block.max(1);
        let blocks: Vec<Range<u64>> = (0..n.div_ceil(block))
            .map(|b| b * block..((b + 1) * block).min(n))
            .collect();
        match &self.pool {
            None => blocks.into_iter().map(&f).collect(),
            Some(pool) => pool.install(|| blocks.into_par_iter().map(&f).collect()),
        }
    }

    /// Folds replications `[0, n)` into one accumulator.
    pub fn fold<A, I, F>(&self, n: u64, init: I, f: F) -> A
    where
        A: Merge + Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, u64) + Sync,
    {
        let parts = self.map_blocks(n, DEFAULT_BLOCK, |r| {
            let mut acc = init();
            for i in r {
                f(&mut acc, i);
            }
            acc
        });
        let mut out = init();
        for p in parts {
            out.merge(p);
        }
        out
    }
}

impl Default for Pool {
    fn default() -> Self {
        Self::serial()
    }
}
