//! Worker pool for independent jobs (sweep points, teacher members).

use rayon::prelude::*;

use crate::error::{LabError, Result};

pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(LabError::config("workers must be at least 1"));
        }
        let inner = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| LabError::config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Pool { inner })
    }

    pub fn workers(&self) -> usize {
        self.inner.current_num_threads()
    }

    /// Applies `f` to every job; results keep the job order whatever the
    /// completion order. The first error in job order is returned.
    pub fn map<T, R, F>(&self, jobs: Vec<T>, f: F) -> Result<Vec<R>>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> Result<R> + Sync + Send,
    {
        let out: Vec<Result<R>> = self.inner.install(|| jobs.into_par_iter().map(&f).collect());
        out.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_job_order() {
        let pool = Pool::new(3).unwrap();
        assert_eq!(pool.workers(), 3);
        let out = pool.map((0..50u64).collect(), |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..50u64).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn reports_first_error() {
        let pool = Pool::new(2).unwrap();
        let err = pool
            .map((0..10).collect(), |i: i32| if i % 4 == 3 { Err(LabError::config(format!("job {i}"))) } else { Ok(i) })
            .unwrap_err();
        assert!(err.to_string().contains("job 3"));
        assert!(Pool::new(0).is_err());
    }
}
