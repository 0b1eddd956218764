//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on the rayon pool, otherwise
//! they run in order on the calling thread. Every helper writes into disjoint
//! output slots, so results are bit-identical between the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(row_index, row)` for each `width`-sized chunk of `data`.
pub fn for_each_row<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// Maps `f` over the items of a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items` with at most `workers` running at once, keeping
/// the input order. Without the `parallel` feature this is a plain loop.
pub fn map_bounded<I, T, F>(items: &[I], workers: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && items.len() > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(|| map_slice(items, f));
            }
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn for_each_row_touches_every_row() {
        let mut data = vec![0.0; 12];
        for_each_row(&mut data, 3, |i, row| row.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(data, vec![0., 0., 0., 1., 1., 1., 2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<u64> = (0..9).collect();
        assert_eq!(map_bounded(&items, 3, |x| x * 2), map_bounded(&items, 1, |x| x * 2));
        assert_eq!(map_bounded(&items, 4, |x| x + 1)[8], 9);
    }
}
