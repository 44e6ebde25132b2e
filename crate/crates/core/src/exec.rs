//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run in index order on the calling thread. Every helper returns results
//! in index order so reductions done afterwards are schedule independent.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk length used for partial sums. Chunk boundaries never depend on
/// the number of worker threads.
pub const CHUNK: usize = 1024;

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
}

/// Sum `f(i)` over `0..n`, accumulating fixed-size chunks in parallel and the
/// chunk totals sequentially.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = map_range(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Vector-valued version of [`chunked_sum`]; `f` adds its contribution into
/// the accumulator.
pub fn chunked_accumulate<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = map_range(chunks, |c| {
        let mut acc = vec![0.0; width];
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        for i in lo..hi {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; width];
    for acc in partial {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    total
}

/// Reports whether this build runs the helpers on a thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
