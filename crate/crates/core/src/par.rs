//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! the rayon pool; without it the same closures run in index order. Every
//! helper writes disjoint outputs or returns results in index order, so the
//! two builds produce bit-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluate `f(i)` for `i in 0..n`, collecting in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Evaluate `f` over `items`, collecting in order.
pub fn map_slice<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_once() {
        let mut v = vec![0usize; 10];
        for_each_chunk_mut(&mut v, 3, |i, c| c.iter_mut().for_each(|x| *x += i + 1));
        assert_eq!(v, [1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map_range(5, |i| i * i), [0, 1, 4, 9, 16]);
        assert_eq!(map_slice(&[3, 1, 2], |x| x + 1), [4, 2, 3]);
    }
}
