//! Boundary extraction and exact point-set distances.
//!
//! Per-point nearest distances are found by scanning the target set sorted on
//! x outward from the query and stopping once the x gap alone exceeds the best
//! squared distance, which is exact.

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Inner 4-connected boundary of a row-major `h × w` mask as `(row, col)` points.
/// Pixels on the image border count as boundary.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let bg = |yy: Option<usize>, xx: Option<usize>| match (yy, xx) {
                (Some(yy), Some(xx)) if yy < h && xx < w => !mask[yy * w + xx],
                _ => true,
            };
            if bg(y.checked_sub(1), Some(x)) || bg(Some(y + 1), Some(x)) || bg(Some(y), x.checked_sub(1)) || bg(Some(y), Some(x + 1)) {
                out.push((y as f64, x as f64));
            }
        }
    }
    out
}

struct SortedSet {
    pts: Vec<Point>,
}

impl SortedSet {
    fn new(pts: &[Point]) -> Self {
        let mut pts = pts.to_vec();
        pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
        Self { pts }
    }

    /// Exact squared distance from `q` to the nearest point.
    fn nearest_sq(&self, q: Point) -> f64 {
        let start = self.pts.partition_point(|p| p.1 < q.1);
        let mut best = f64::INFINITY;
        let d2 = |p: &Point| (p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1);
        for p in &self.pts[start..] {
            if (p.1 - q.1) * (p.1 - q.1) > best {
                break;
            }
            best = best.min(d2(p));
        }
        for p in self.pts[..start].iter().rev() {
            if (p.1 - q.1) * (p.1 - q.1) > best {
                break;
            }
            best = best.min(d2(p));
        }
        best
    }
}

fn nonempty(a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::NoBoundary)
    } else {
        Ok(())
    }
}

/// Distances from every point of `from` to its nearest neighbour in `to`.
fn nearest_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    let s = SortedSet::new(to);
    from.iter().map(|&q| s.nearest_sq(q).sqrt()).collect()
}

/// Symmetric Hausdorff distance scaled by `spacing`.
pub fn hausdorff(a: &[Point], b: &[Point], spacing: f64) -> Result<f64> {
    nonempty(a, b)?;
    let ab = nearest_distances(a, b).into_iter().fold(0.0, f64::max);
    let ba = nearest_distances(b, a).into_iter().fold(0.0, f64::max);
    Ok(ab.max(ba) * spacing)
}

/// Average symmetric surface distance: all nearest-neighbour distances from
/// both directions, summed in order `a` then `b`, divided by `|a| + |b|`.
pub fn assd(a: &[Point], b: &[Point], spacing: f64) -> Result<f64> {
    nonempty(a, b)?;
    let total: f64 = nearest_distances(a, b).into_iter().chain(nearest_distances(b, a)).sum();
    Ok(total / (a.len() + b.len()) as f64 * spacing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        assert_eq!(hausdorff(&[(0.0, 0.0)], &[(3.0, 4.0)], 1.0).unwrap(), 5.0);
        assert_eq!(assd(&[(0.0, 0.0)], &[(0.0, 2.0)], 1.0).unwrap(), 2.0);
        let s = [(1.0, 2.0), (5.0, -1.0), (0.5, 0.5)];
        assert_eq!(hausdorff(&s, &s, 1.0).unwrap(), 0.0);
        assert_eq!(assd(&s, &s, 1.0).unwrap(), 0.0);
        assert_eq!(hausdorff(&[(0.0, 0.0)], &[(3.0, 4.0)], 0.5).unwrap(), 2.5);
        assert!(matches!(hausdorff(&[], &s, 1.0), Err(Error::NoBoundary)));
        assert!(matches!(assd(&s, &[], 1.0), Err(Error::NoBoundary)));
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let (h, w) = (5, 5);
        let mask: Vec<bool> = (0..25).map(|i| (1..4).contains(&(i / 5)) && (1..4).contains(&(i % 5))).collect();
        let b = boundary(&mask, h, w);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(2.0, 2.0)));
        assert!(boundary(&[false; 25], h, w).is_empty());
    }

    proptest! {
        #[test]
        fn hausdorff_bounds_assd(
            a in proptest::collection::vec((-20i32..20, -20i32..20), 1..12),
            b in proptest::collection::vec((-20i32..20, -20i32..20), 1..12),
        ) {
            let a: Vec<Point> = a.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
            let b: Vec<Point> = b.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
            let h = hausdorff(&a, &b, 1.0).unwrap();
            let d = assd(&a, &b, 1.0).unwrap();
            prop_assert!(h >= d - 1e-12 && d >= 0.0);
            prop_assert_eq!(h, hausdorff(&b, &a, 1.0).unwrap());
        }
    }
}
