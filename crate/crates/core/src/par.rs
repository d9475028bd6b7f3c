//! Thin wrappers so the same call sites run on rayon or sequentially.
//!
//! Every helper preserves input order in its output, so reductions done
//! afterwards are deterministic regardless of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, returning results in input order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Neumaier-compensated sum in a fixed order.
pub fn sum(values: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            comp += (s - t) + v;
        } else {
            comp += (v - t) + s;
        }
        s = t;
    }
    s + comp
}

/// Ordered parallel map followed by a compensated sum.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum(&map_range(n, f))
}

/// Whether the crate was built with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Fix the global worker count. Only the first call takes effect; without
/// the `parallel` feature any request other than 1 is an error.
pub fn set_threads(k: usize) -> Result<(), String> {
    if k == 0 {
        return Err("thread count must be positive".into());
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if k == 1 {
            Ok(())
        } else {
            Err("built without the `parallel` feature".into())
        }
    }
}

/// Run `f` inside a dedicated pool of `k` workers (sequential fallback ignores `k`).
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(k: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = k;
        f()
    }
}
