//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work fans out on rayon's pool;
//! without it every helper runs in order on the calling thread. Results
//! are always returned in input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecutionMode {
    /// Parallel when compiled with the `parallel` feature.
    pub fn effective(self) -> ExecutionMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecutionMode::Sequential
        }
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(mode: ExecutionMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(mode: ExecutionMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Number of items a chunked pipeline should evaluate per round.
pub fn chunk_hint(mode: ExecutionMode) -> usize {
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => 4 * rayon::current_num_threads().max(1),
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map(ExecutionMode::Sequential, &xs, |i, x| x * x + i as u64);
        let par = map(ExecutionMode::Parallel, &xs, |i, x| x * x + i as u64);
        assert_eq!(seq, par);
        assert_eq!(
            map_range(ExecutionMode::Parallel, 10, |i| i * 2),
            (0..10).map(|i| i * 2).collect::<Vec<_>>()
        );
    }
}
