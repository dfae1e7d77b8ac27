//! Execution strategy for the data-parallel loops in this crate.
//!
//! With the `parallel` feature (on by default) the hot loops fan out over
//! rayon's global pool. Without it, or with [`Execution::Sequential`], the
//! same code runs on the calling thread. Results never depend on the
//! strategy: every reduction used here is associative and order-stable.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Folds chunks of `items` into partial accumulators and merges them.
///
/// `merge` must be associative and `identity` its neutral element.
pub fn fold_reduce<T, A, I, F, M>(exec: Execution, items: &[T], identity: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().fold(&identity, &fold).reduce(&identity, &merge);
    }
    let _ = (exec, &merge);
    items.iter().fold(identity(), fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let xs: Vec<u64> = (0..10_000).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(map(exec, &xs, |x| x * 2)[9_999], 19_998);
            assert_eq!(map_range(exec, 5, |i| i * i), vec![0, 1, 4, 9, 16]);
            let sum = fold_reduce(exec, &xs, || 0u64, |a, x| a + x, |a, b| a + b);
            assert_eq!(sum, 49_995_000);
        }
    }
}
