//! Ordered data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the work runs on a rayon pool sized to the
//! requested degree; without it, or with a degree of 1, items are processed
//! in order on the calling thread. Output order always follows input order.

use crate::error::Result;

/// Requested parallelism degree. `0` means "all available cores".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallelism(pub usize);

impl Parallelism {
    pub const SEQUENTIAL: Parallelism = Parallelism(1);
    pub const MAX: Parallelism = Parallelism(0);

    pub fn is_sequential(self) -> bool {
        self.0 == 1 || !cfg!(feature = "parallel")
    }
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::MAX
    }
}

/// Applies `f` to every item and returns results in input order. On failure
/// the error of the lowest-indexed failing item is returned.
pub fn ordered_map<T, R, F>(items: &[T], degree: Parallelism, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    if degree.is_sequential() || items.len() < 2 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    parallel_map(items, degree, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], degree: Parallelism, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;

    let run = || -> Vec<Result<R>> {
        items
            .par_iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect()
    };
    let outcomes = match degree.0 {
        0 => run(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| run()),
    };
    outcomes.into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _degree: Parallelism, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn preserves_order_for_every_degree() {
        let items: Vec<u64> = (0..500).collect();
        let want: Vec<u64> = items.iter().map(|x| x * x + 1).collect();
        for degree in [1, 2, 4, 0] {
            let got = ordered_map(&items, Parallelism(degree), |_, x| Ok(x * x + 1)).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn reports_first_error() {
        let items: Vec<usize> = (0..200).collect();
        for degree in [1, 4, 0] {
            let err = ordered_map(&items, Parallelism(degree), |i, _| {
                if i % 50 == 17 {
                    Err(Error::InvalidParam(format!("item {i}")))
                } else {
                    Ok(i)
                }
            })
            .unwrap_err();
            assert_eq!(err.to_string(), "invalid parameter: item 17");
        }
    }
}
