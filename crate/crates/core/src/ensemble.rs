//! Deterministic ensemble plumbing: seed derivation per path, indexed
//! parallel map with a sequential fallback, and order-stable reductions.
//!
//! Results are functions of (root seed, index) only, so worker count never
//! changes a single bit of the output.

/// Derive the RNG seed of path `index` from the root seed (splitmix64 mix).
pub fn mix_seed(root: u64, index: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Evaluate `f(0..n)` and collect results in index order.
///
/// `workers == 1` (or building without the `parallel` feature) runs
/// sequentially; otherwise a dedicated thread pool of the requested size is
/// used. Output is identical either way.
pub fn run_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool construction");
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

/// Pairwise (cascade) summation; associativity is fixed by the slice layout,
/// independent of how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean and standard error of the mean via pairwise sums.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n;
    if xs.len() == 1 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}
