//! Fan-out of independent jobs (games, per-agent optimization).
//!
//! Every job carries its own seed, so results do not depend on how an
//! executor schedules them as long as it returns them in input order.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Applies `f` to every item and returns the results in input order.
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}
