//! Order-preserving fan-out used by the heavier loops.
//!
//! Core algorithms express independent work as `map_indexed(n, f)`; the
//! results come back in index order whatever the schedule, so output never
//! depends on how many workers ran it.

use alloc::vec::Vec;

pub trait Parallelism: Sync {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Parallelism for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
