//! Data-parallel helpers for batch evaluation.
//!
//! With the `parallel` feature (default) these run on the rayon pool; without
//! it, or when [`Exec::Sequential`] is requested, they are plain iterators.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
        }
    }

    pub fn sum<T, F>(self, items: &[T], f: F) -> u64
    where
        T: Sync,
        F: Fn(&T) -> u64 + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).sum(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).sum(),
        }
    }

    pub fn sort<T: Ord + Send>(self, items: &mut [T]) {
        match self {
            Exec::Sequential => items.sort_unstable(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_sort_unstable(),
        }
    }

    /// Runs `f` for every index in `0..n`, collecting results in order.
    pub fn map_range<R, F>(self, n: u64, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(u64) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..10_000).rev().collect();
        let seq = Exec::Sequential;
        let def = Exec::default();
        assert_eq!(seq.map(&xs, |x| x * 2), def.map(&xs, |x| x * 2));
        assert_eq!(seq.sum(&xs, |x| *x), def.sum(&xs, |x| *x));
        let mut a = xs.clone();
        let mut b = xs.clone();
        seq.sort(&mut a);
        def.sort(&mut b);
        assert_eq!(a, b);
        assert_eq!(seq.map_range(5, |i| i), def.map_range(5, |i| i));
    }
}
