//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, [`Execution::Parallel`] dispatches through
//! rayon's global pool; without it every call runs in order on the current
//! thread. Results are always returned in input order, so reductions done by
//! the caller are deterministic regardless of the mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` when more than one worker is requested.
    pub fn from_workers(workers: usize) -> Self {
        if workers > 1 {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Apply `f` to every item, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Apply `f` to every index in `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Configure the global rayon pool size. A no-op without the `parallel` feature.
pub fn init_workers(workers: usize) {
    #[cfg(feature = "parallel")]
    {
        // The global pool can only be built once; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_in_order() {
        let items: Vec<u32> = (0..100).collect();
        let seq = map(Execution::Sequential, &items, |x| x * x);
        let par = map(Execution::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(map_range(Execution::Parallel, 5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }
}
