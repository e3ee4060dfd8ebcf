//! Data-parallel helpers. With the `parallel` feature (default) the
//! item-wise maps run on rayon; without it they fall back to sequential
//! iteration. Results are always collected in input order, so reductions
//! downstream stay deterministic either way.

/// Maps `f` over `items`, sequentially.
pub fn map_seq<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Maps `f` over `items` on the rayon pool, preserving order.
#[cfg(feature = "parallel")]
pub fn map_par<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Feature-dispatched map: parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    map_par(items, f)
}

/// Feature-dispatched map: parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    map_seq(items, f)
}

/// Maps `f` over indices `0..n`, feature-dispatched.
pub fn map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, |&i| f(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<usize> = (0..64).collect();
        let out = map(&items, |&i| i * 2);
        assert_eq!(out, map_seq(&items, |&i| i * 2));
    }
}
