//! Order-preserving data-parallel map. With the `parallel` feature the work is
//! spread over the rayon pool; without it the same closure runs sequentially.
//! Results are always returned in input order, so reductions over them are
//! bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Sequential reference used by benches and equivalence tests.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Fallible variant of [`map_ordered`]; the first error in input order wins.
pub fn try_map_ordered<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map_ordered(items, f).into_iter().collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_map_matches_sequential() {
        let xs: Vec<u64> = (0..500).collect();
        let f = |i: usize, x: &u64| (i as u64) * 31 + x * x;
        assert_eq!(map_ordered(&xs, f), map_sequential(&xs, f));
    }

    #[test]
    fn first_error_in_order_is_reported() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, String> =
            try_map_ordered(&xs, |_, &x| if x >= 3 { Err(format!("bad {x}")) } else { Ok(x) });
        assert_eq!(r.unwrap_err(), "bad 3");
    }
}
