//! Order-preserving parallel map; sequential without the `parallel` feature.

use crate::error::Result;

#[cfg(feature = "parallel")]
pub fn map_ordered<I, T, F>(items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync + Copy,
    T: Send,
    F: Fn(I) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    items.par_iter().map(|&i| f(i)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<I, T, F>(items: &[I], f: F) -> Result<Vec<T>>
where
    I: Copy,
    F: Fn(I) -> Result<T>,
{
    items.iter().map(|&i| f(i)).collect()
}
