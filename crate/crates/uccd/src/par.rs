//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops (scenario evaluation, finite-difference gradients, path
//! ensembles, grid scans) go through these helpers. With the `parallel`
//! feature (default) they run on rayon; without it the same code compiles
//! to plain sequential loops. Results are always collected into an
//! index-ordered `Vec` and reduced in index order afterwards, so outputs
//! are bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Caps the global worker pool (the `UCCD_THREADS` contract). A no-op once
/// the pool exists or when the crate is built without `parallel`.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) {}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential variant, kept for benchmark baselines.
pub fn map_range_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Ordered sum of `f(i)` for `i in 0..n`. The reduction itself is
/// sequential over the collected values so it does not depend on the
/// parallel schedule.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(n, f).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_collection() {
        let v = map_range(100, |i| i * 2);
        assert_eq!(v[7], 14);
        assert_eq!(v.len(), 100);
        assert_eq!(v, map_range_seq(100, |i| i * 2));
    }

    #[test]
    fn sum_matches_sequential() {
        let s = sum_range(1000, |i| (i as f64).sqrt());
        let expect: f64 = (0..1000).map(|i| (i as f64).sqrt()).sum();
        assert_eq!(s, expect);
    }
}
