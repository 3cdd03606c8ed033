//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the helpers fan work out on the
//! rayon pool. Results always come back in index order and reductions are done
//! over fixed chunk boundaries, so the parallel and sequential paths produce
//! bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Evaluates `f(i)` for `i in 0..n`, results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Splits `0..n` into consecutive chunks of `chunk` indices, folds every chunk
/// sequentially into a fresh accumulator, and returns the per-chunk
/// accumulators in chunk order.
pub fn chunked_fold<A, I, F>(exec: Execution, n: usize, chunk: usize, init: I, fold: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
{
    let chunk = chunk.max(1);
    let num_chunks = n.div_ceil(chunk);
    map_indexed(exec, num_chunks, |c| {
        let mut acc = init();
        for i in c * chunk..((c + 1) * chunk).min(n) {
            fold(&mut acc, i);
        }
        acc
    })
}

/// Applies `f` to every element of `items` (with its index), in place.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
    }
}
