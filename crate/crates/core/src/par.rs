//! Data-parallel map helpers.
//!
//! Trials, grid nodes and quadrature cells are independent jobs keyed by
//! index; results are collected in index order, so the output is identical
//! whatever the execution order. When the `parallel` feature is off, or the
//! runtime switch asks for it, everything runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runtime execution policy for index-keyed sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Parallelism {
    /// Run jobs one after the other on the calling thread.
    Sequential,
    /// Use the rayon thread pool (falls back to sequential when the
    /// `parallel` feature is compiled out).
    #[default]
    Rayon,
}

impl Parallelism {
    /// Map a harness "parallelism degree" onto a policy: degree 1 forces the
    /// sequential path, anything else uses the pool.
    pub fn from_degree(degree: usize) -> Self {
        if degree == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Rayon
        }
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn par_map<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Fallible version of [`par_map`]: the first error (lowest index) wins.
pub fn try_par_map<T, F>(n: usize, par: Parallelism, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync + Send,
{
    let results = par_map(n, par, f);
    results.into_iter().collect()
}
