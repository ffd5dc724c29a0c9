//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here splits its input into chunks of [`CHUNK_LEN`]
//! elements, reduces each chunk left to right and then folds the chunk
//! totals in index order. The chunk boundaries never depend on the number of
//! worker threads, so parallel and sequential runs are bit-identical.
//!
//! Without the `parallel` feature [`ExecMode::Parallel`] silently runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction chunk length.
pub const CHUNK_LEN: usize = 2048;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this mode actually fans out to the rayon pool in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Ordered map over a slice.
pub fn map<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Ordered map over `0..n`.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Deterministic chunked sum of `f(index, item)`.
pub fn sum<T, F>(mode: ExecMode, items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(usize, &T) -> f64 + Sync + Send,
{
    let chunk_sum = |(c, chunk): (usize, &[T])| {
        let base = c * CHUNK_LEN;
        chunk
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, item)| acc + f(base + i, item))
    };
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            if mode.is_parallel() {
                items.par_chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
            } else {
                items.chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = mode;
            items.chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
        }
    };
    partials.into_iter().fold(0.0, |a, b| a + b)
}

/// Like [`sum`], but stops at non-finite terms and reports the lowest
/// offending index.
pub fn try_sum<T, F>(mode: ExecMode, items: &[T], f: F) -> std::result::Result<f64, usize>
where
    T: Sync,
    F: Fn(usize, &T) -> f64 + Sync + Send,
{
    let chunk_sum = |(c, chunk): (usize, &[T])| -> std::result::Result<f64, usize> {
        let base = c * CHUNK_LEN;
        let mut acc = 0.0;
        for (i, item) in chunk.iter().enumerate() {
            let term = f(base + i, item);
            if !term.is_finite() {
                return Err(base + i);
            }
            acc += term;
        }
        Ok(acc)
    };
    let partials: Vec<std::result::Result<f64, usize>> = {
        #[cfg(feature = "parallel")]
        {
            if mode.is_parallel() {
                items.par_chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
            } else {
                items.chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = mode;
            items.chunks(CHUNK_LEN).enumerate().map(chunk_sum).collect()
        }
    };
    partials.into_iter().try_fold(0.0, |a, b| b.map(|b| a + b))
}

/// Run two closures, concurrently when parallelism is available.
pub fn join<A, B, RA, RB>(mode: ExecMode, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return rayon::join(a, b);
    }
    let _ = mode;
    (a(), b())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_mode_independent() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let a = sum(ExecMode::Sequential, &xs, |_, x| *x);
        let b = sum(ExecMode::Parallel, &xs, |_, x| *x);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn try_sum_reports_first_bad_index() {
        let mut xs = vec![1.0; 5000];
        xs[4100] = f64::NAN;
        xs[2500] = f64::INFINITY;
        assert_eq!(try_sum(ExecMode::Parallel, &xs, |_, x| *x), Err(2500));
        xs[2500] = 1.0;
        xs[4100] = 1.0;
        assert_eq!(try_sum(ExecMode::Sequential, &xs, |_, x| *x), Ok(5000.0));
    }

    #[test]
    fn map_preserves_order() {
        let out = map_range(ExecMode::Parallel, 1000, |i| i * 2);
        assert!(out.iter().enumerate().all(|(i, v)| *v == 2 * i));
    }
}
