//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in index order, so callers that reduce the
//! output sequentially get the same floating-point result whichever mode
//! ran the work.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch-level loops are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon global pool. Without the `parallel` feature this is
    /// the same as `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over the items of `items`, returning results in order.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_on_order() {
        let a = Execution::Sequential.map_range(100, |i| i * i);
        let b = Execution::Parallel.map_range(100, |i| i * i);
        assert_eq!(a, b);
        let xs: Vec<u32> = (0..50).collect();
        assert_eq!(
            Execution::Sequential.map_slice(&xs, |x| x + 1),
            Execution::Parallel.map_slice(&xs, |x| x + 1)
        );
    }
}
