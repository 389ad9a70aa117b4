//! Thread-pool control and reductions whose result does not depend on the
//! number of worker threads.
//!
//! Work is split into a fixed partition of blocks that depends only on the
//! input length. Blocks are folded serially inside, evaluated in parallel, and
//! the per-block partials are combined with a pairwise tree in block order.
//! The floating-point association is therefore identical for 1 or N threads.

use rayon::prelude::*;

/// Upper bound on the number of blocks a reduction is split into.
pub const MAX_BLOCKS: usize = 64;

/// Runs `f` on a dedicated rayon pool with `threads` workers.
///
/// `threads == 0` uses the global pool.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}

/// Block ranges covering `0..len`. Depends on `len` only.
pub fn block_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let blocks = len.min(MAX_BLOCKS);
    let size = len.div_ceil(blocks);
    (0..len)
        .step_by(size)
        .map(|start| start..(start + size).min(len))
        .collect()
}

/// Combines partials pairwise: ((p0+p1)+(p2+p3))+...
pub fn tree_sum<T>(mut parts: Vec<T>, mut combine: impl FnMut(T, T) -> T) -> Option<T> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Deterministic parallel map-reduce over `0..len`.
///
/// `fold` accumulates one record into a block accumulator created by
/// `identity`; `combine` merges two accumulators.
pub fn reduce<T, I, F, C>(len: usize, identity: I, fold: F, combine: C) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, usize) + Sync,
    C: Fn(T, T) -> T,
{
    let partials: Vec<T> = block_ranges(len)
        .into_par_iter()
        .map(|range| {
            let mut acc = identity();
            for i in range {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    tree_sum(partials, combine).unwrap_or_else(identity)
}

/// Sum of `f(i)` for `i in 0..len` using [`reduce`].
pub fn sum_f64(len: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    reduce(len, || 0.0, |acc, i| *acc += f(i), |a, b| a + b)
}
