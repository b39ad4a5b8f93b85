//! Data-parallel kernels with a sequential fallback.
//!
//! Everything in the crate that enumerates a large index space funnels
//! through these helpers. With the `parallel` feature (default) they run on
//! rayon; without it, or after [`force_sequential`], they run sequentially.
//! Reductions are chunked with a fixed chunk size and combined in chunk
//! order, so results are bit-identical regardless of thread count. Searches
//! return the first hit in index order for the same reason.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk size for ordered reductions. Independent of thread count.
const CHUNK: usize = 1 << 13;

static FORCE_SEQ: AtomicBool = AtomicBool::new(false);

/// Disable the parallel paths at runtime (used by the benchmark suite to
/// compare both implementations in one process).
pub fn force_sequential(on: bool) {
    FORCE_SEQ.store(on, Ordering::SeqCst);
}

/// Whether the parallel paths are active.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQ.load(Ordering::Relaxed)
}

fn chunk_ranges(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(move |c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
}

/// Sum `f(i)` over `0..n` as f64, chunked deterministically.
pub fn sum_f64<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial = |(lo, hi): (usize, usize)| (lo..hi).map(&f).sum::<f64>();
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        let chunks: Vec<(usize, usize)> = chunk_ranges(n).collect();
        let sums: Vec<f64> = chunks.into_par_iter().map(partial).collect();
        return sums.into_iter().sum();
    }
    chunk_ranges(n).map(partial).sum()
}

/// Sum `f(i)` over `0..n` as u128 (exact, so chunking is for speed only).
pub fn sum_u128<F>(n: usize, f: F) -> u128
where
    F: Fn(usize) -> u128 + Sync,
{
    let partial = |(lo, hi): (usize, usize)| (lo..hi).map(&f).sum::<u128>();
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        let chunks: Vec<(usize, usize)> = chunk_ranges(n).collect();
        let sums: Vec<u128> = chunks.into_par_iter().map(partial).collect();
        return sums.into_iter().sum();
    }
    chunk_ranges(n).map(partial).sum()
}

/// First index in `0..n` satisfying `pred`, independent of thread count.
pub fn find_first<F>(n: usize, pred: F) -> Option<usize>
where
    F: Fn(usize) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().find_first(|&i| pred(i));
    }
    (0..n).find(|&i| pred(i))
}

/// Map `f` over `0..n` preserving index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fill `out[i] = f(i)` in place, in parallel when enabled.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i));
        return;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_sequential() {
        let f = |i: usize| ((i * 2654435761) % 1000) as f64 / 7.0;
        let par = sum_f64(100_000, f);
        force_sequential(true);
        let seq = sum_f64(100_000, f);
        force_sequential(false);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn find_first_is_lowest_index() {
        assert_eq!(find_first(10_000, |i| i % 37 == 5 && i > 100), Some(116));
        assert_eq!(find_first(10, |_| false), None);
    }
}
