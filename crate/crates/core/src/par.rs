//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these run on rayon; without it they
//! degrade to plain loops. Results are identical either way: work items are
//! independent and outputs are collected in index order, so no floating-point
//! reduction ever depends on scheduling.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync) -> Vec<U> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Apply `f` to each `chunk`-sized slice of `data` (one slice per sample).
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T: Send>(
    data: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Sync,
) {
    use rayon::prelude::*;
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, slice)| f(i, slice));
}

/// Apply `f` to each `chunk`-sized slice of `data` (one slice per sample).
#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T>(data: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T])) {
    for (i, slice) in data.chunks_mut(chunk).enumerate() {
        f(i, slice);
    }
}

/// Run `f` inside a single-threaded pool, forcing the parallel code paths
/// to execute sequentially. Used by the benchmark suite for comparison.
#[cfg(feature = "parallel")]
pub fn sequentially<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
        .install(f)
}

/// Without the `parallel` feature everything is already sequential.
#[cfg(not(feature = "parallel"))]
pub fn sequentially<R>(f: impl FnOnce() -> R) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn chunk_iteration_covers_all_samples() {
        let mut data = vec![0.0; 12];
        for_each_chunk_mut(&mut data, 3, |i, s| s.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(data[0], 0.0);
        assert_eq!(data[11], 3.0);
    }
}
