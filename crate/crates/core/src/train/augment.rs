//! Geometry-consistent augmentations: horizontal flip, isotropic scaling about
//! the frame centre and gamma contrast. The same draw applies to every frame of
//! a clip and to its masks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::SparseLabels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const GAMMA_RANGE: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentation {
    pub flip: bool,
    pub scale: bool,
    pub contrast: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            flip: true,
            scale: true,
            contrast: true,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            flip: false,
            scale: false,
            contrast: false,
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: f64,
    pub gamma: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        flip: false,
        scale: 1.0,
        gamma: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(aug: &Augmentation, rng: &mut R) -> Self {
        // Always consume the same number of draws so toggling one flag does not
        // reshuffle the others.
        let flip = rng.random_bool(0.5);
        let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let gamma = rng.random_range(GAMMA_RANGE.0..=GAMMA_RANGE.1);
        Self {
            flip: aug.flip && flip,
            scale: if aug.scale { scale } else { 1.0 },
            gamma: if aug.contrast { gamma } else { 1.0 },
        }
    }
}

fn flip_rows<T: Copy>(plane: &mut [T], w: usize) {
    for row in plane.chunks_mut(w) {
        row.reverse();
    }
}

/// Source coordinate of output pixel `i` under scaling by `s` about the centre.
fn source(i: usize, n: usize, s: f64) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    c + (i as f64 - c) / s
}

fn scale_image(plane: &[f64], h: usize, w: usize, s: f64) -> Vec<f64> {
    let at = |y: isize, x: isize| plane[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let sy = source(y, h, s);
        let (y0, fy) = (sy.floor(), sy - sy.floor());
        for x in 0..w {
            let sx = source(x, w, s);
            let (x0, fx) = (sx.floor(), sx - sx.floor());
            let (y0, x0) = (y0 as isize, x0 as isize);
            out[y * w + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

fn scale_mask(mask: &[u8], h: usize, w: usize, s: f64) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let sy = source(y, h, s).round();
        for x in 0..w {
            let sx = source(x, w, s).round();
            if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                out[y * w + x] = mask[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

/// Applies `draw` to a `[C, T, H, W]` clip and its labels.
pub fn apply(video: &Tensor, labels: &SparseLabels, draw: &AugmentDraw) -> Result<(Tensor, SparseLabels)> {
    let &[_, _, h, w] = video.shape() else {
        return Err(Error::InvalidShape {
            op: "augment",
            detail: format!("expected [C, T, H, W], got {:?}", video.shape()),
        });
    };
    if labels.height != h || labels.width != w {
        return Err(Error::invalid("labels do not match clip geometry"));
    }
    let mut out = video.clone();
    let mut masks = labels.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        if draw.flip {
            flip_rows(plane, w);
        }
        if draw.scale != 1.0 {
            let scaled = scale_image(plane, h, w, draw.scale);
            plane.copy_from_slice(&scaled);
        }
        if draw.gamma != 1.0 {
            plane.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0).powf(draw.gamma));
        }
    }
    for m in masks.masks.values_mut() {
        if draw.flip {
            flip_rows(m, w);
        }
        if draw.scale != 1.0 {
            *m = scale_mask(m, h, w, draw.scale);
        }
    }
    Ok((out, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(h: usize, w: usize) -> (Tensor, SparseLabels) {
        let v = Tensor::new(vec![1, 2, h, w], (0..2 * h * w).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let mut l = SparseLabels::new(2, h, w);
        l.insert(1, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
        (v, l)
    }

    #[test]
    fn identity_draw_is_a_no_op() {
        let (v, l) = clip(4, 6);
        let (v2, l2) = apply(&v, &l, &AugmentDraw::IDENTITY).unwrap();
        assert_eq!(v, v2);
        assert_eq!(l, l2);
    }

    #[test]
    fn scale_one_interpolation_is_exact() {
        let plane: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(scale_image(&plane, 4, 5, 1.0), plane);
        let m: Vec<u8> = (0..20).collect();
        assert_eq!(scale_mask(&m, 4, 5, 1.0), m);
    }

    #[test]
    fn gamma_keeps_unit_range() {
        let (v, l) = clip(4, 4);
        let d = AugmentDraw { gamma: 1.25, ..AugmentDraw::IDENTITY };
        let (v2, _) = apply(&v, &l, &d).unwrap();
        assert!(v2.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!((v2.data()[3] - v.data()[3].powf(1.25)).abs() < 1e-15);
    }

    #[test]
    fn disabled_flags_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(AugmentDraw::sample(&Augmentation::none(), &mut rng), AugmentDraw::IDENTITY);
        }
    }

    proptest! {
        #[test]
        fn flip_moves_image_and_mask_together(h in 1usize..6, w in 1usize..6) {
            let (v, l) = clip(h, w);
            // Tag mask pixels by image content so co-location can be checked.
            let mut l = l;
            let tagged: Vec<u8> = v.data()[h * w..].iter().map(|&x| (x * 7.0).round() as u8).collect();
            l.insert(1, tagged).unwrap();
            let d = AugmentDraw { flip: true, ..AugmentDraw::IDENTITY };
            let (v2, l2) = apply(&v, &l, &d).unwrap();
            for (px, &m) in l2.masks[&1].iter().enumerate() {
                prop_assert_eq!((v2.data()[h * w + px] * 7.0).round() as u8, m);
            }
            let (v3, l3) = apply(&v2, &l2, &d).unwrap();
            prop_assert_eq!(v3, v);
            prop_assert_eq!(l3, l);
        }
    }
}
