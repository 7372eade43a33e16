//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel map in the crate goes through [`Execution`], so results are
//! collected in input order regardless of worker count. With the `parallel`
//! feature disabled, [`Execution::Parallel`] degrades to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually dispatches to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps over fixed-size chunks. Chunk boundaries depend only on
    /// `chunk_size`, never on the worker count.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk_size: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk_size = chunk_size.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_chunks(chunk_size).map(f).collect();
        }
        items.chunks(chunk_size).map(f).collect()
    }
}

/// Runs `f` inside a pool with `workers` threads (0 = rayon default).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x + 1);
        let par = Execution::Parallel.map(&items, |x| x * x + 1);
        assert_eq!(seq, par);
        let seq = Execution::Sequential.map_chunks(&items, 7, |c| c.iter().sum::<u64>());
        let par = with_workers(3, || {
            Execution::Parallel.map_chunks(&items, 7, |c| c.iter().sum::<u64>())
        });
        assert_eq!(seq, par);
        assert_eq!(
            Execution::Parallel.map_range(5, |i| i * 2),
            vec![0, 2, 4, 6, 8]
        );
    }
}
