//! Rayon-backed particle executor.

use pbpf_core::filter::Executor;
use pbpf_core::Error;
use rayon::prelude::*;

/// Runs per-particle work on the rayon pool. Results are identical to
/// [`pbpf_core::filter::Sequential`] because every particle draws from its
/// own stream; on failure the error of the lowest failing index wins.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn try_for_each<T, F>(&self, items: &mut [T], f: F) -> Result<(), Error>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<(), Error> + Sync + Send,
    {
        let results: Vec<Result<(), Error>> = items.par_iter_mut().enumerate().map(|(i, item)| f(i, item)).collect();
        results.into_iter().collect()
    }
}
