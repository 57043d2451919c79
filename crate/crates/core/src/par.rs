//! Order-preserving parallel map; serial without the `parallel` feature.

#[cfg(feature = "parallel")]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Sets the size of the global worker pool. Only the first call has an
/// effect; later calls fail.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::Precondition(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> crate::Result<()> {
    Ok(())
}
