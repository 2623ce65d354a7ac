use crate::error::{Error, Result};

/// `2|P∩G| / (|P|+|G|)`; two empty masks score 1.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "dice",
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += usize::from(p && g);
        total += usize::from(p) + usize::from(g);
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Binary mask of one class in a label map.
pub fn class_mask(labels: &[u8], class: u8) -> Vec<bool> {
    labels.iter().map(|&c| c == class).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_values() {
        let a = [true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert_eq!(dice(&[true; 3], &[false; 3]).unwrap(), 0.0);
        let p = [true, true, true, true, false, false];
        let g = [false, false, true, true, true, true];
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
        assert!(dice(&a, &[true]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(
            bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64),
            rot in 0usize..64,
        ) {
            let p: Vec<bool> = bits.iter().map(|b| b.0).collect();
            let g: Vec<bool> = bits.iter().map(|b| b.1).collect();
            let d = dice(&p, &g).unwrap();
            prop_assert_eq!(d, dice(&g, &p).unwrap());
            let k = rot % p.len();
            let (mut p2, mut g2) = (p.clone(), g.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            prop_assert_eq!(d, dice(&p2, &g2).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
