//! Worker pools for the fan-out phases.

use azpbt_core::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};

/// One worker runs on the calling thread; more use a dedicated rayon pool.
/// Jobs carry their own seeds, so the worker count never changes results.
pub enum Workers {
    Single,
    Pool(ThreadPool),
}

impl Workers {
    pub fn new(workers: usize) -> Result<Workers, ThreadPoolBuildError> {
        if workers <= 1 {
            return Ok(Workers::Single);
        }
        Ok(Workers::Pool(ThreadPoolBuilder::new().num_threads(workers).build()?))
    }

    pub fn count(&self) -> usize {
        match self {
            Workers::Single => 1,
            Workers::Pool(pool) => pool.current_num_threads(),
        }
    }
}

impl Executor for Workers {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        match self {
            Workers::Single => items.into_iter().map(f).collect(),
            Workers::Pool(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
        }
    }
}
