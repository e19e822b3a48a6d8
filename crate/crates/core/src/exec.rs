//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled, [`Execution::Parallel`] maps work over
//! the rayon pool. Without it, both variants run sequentially. Results are
//! always collected in index order, and reductions use a fixed chunking, so
//! outputs are bit-identical across execution modes and thread counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Chunk length used by [`chunked_sum`].
pub const SUM_CHUNK: usize = 4096;

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Sums `n` vector-valued terms of length `dim` in fixed chunks.
///
/// `term(i, acc)` adds term `i` into `acc`. Each chunk is accumulated from
/// zero in index order, then chunk sums are added in chunk order.
pub fn chunked_sum<F>(exec: Execution, n: usize, dim: usize, term: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial = |c: usize| {
        let mut acc = vec![0.0; dim];
        let end = ((c + 1) * SUM_CHUNK).min(n);
        for i in c * SUM_CHUNK..end {
            term(i, &mut acc);
        }
        acc
    };
    let mut total = vec![0.0; dim];
    if chunks == 1 {
        // avoid a thread hop for small batches
        let p = partial(0);
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
        return total;
    }
    for p in map_indexed(exec, chunks, partial) {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(Execution::Parallel, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunked_sum_identical_across_modes() {
        let n = 3 * SUM_CHUNK + 17;
        let term = |i: usize, acc: &mut [f64]| {
            acc[0] += (i as f64).sin();
            acc[1] += 1.0 / (1.0 + i as f64);
        };
        let a = chunked_sum(Execution::Sequential, n, 2, term);
        let b = chunked_sum(Execution::Parallel, n, 2, term);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(chunked_sum(Execution::Sequential, 0, 3, |_, _| {}), vec![0.0; 3]);
    }
}
