//! Bounded worker pools; results keep input order so reductions are
//! independent of scheduling.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Map `f` over `items` on at most `jobs` threads (`0` uses all cores).
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_errors() {
        let xs: Vec<u64> = (0..100).collect();
        let ys = par_map(&xs, 3, |&x| Ok(x * x)).unwrap();
        assert_eq!(ys, xs.iter().map(|x| x * x).collect::<Vec<_>>());
        let bad = par_map(&xs, 2, |&x| if x == 50 { Err(Error::Empty("x".into())) } else { Ok(x) });
        assert!(bad.is_err());
    }
}
