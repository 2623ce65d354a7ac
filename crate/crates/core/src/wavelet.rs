//! Single-level orthonormal 2-D Haar transform.
//!
//! For each 2×2 block `[[a, b], [c, d]]`:
//! `ll = (a+b+c+d)/2`, `lh = (a−b+c−d)/2`, `hl = (a+b−c−d)/2`, `hh = (a−b−c+d)/2`.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSubbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    /// Whether a reflected row / column was appended before the transform.
    pub padded_rows: bool,
    pub padded_cols: bool,
}

impl WaveletSubbands {
    pub fn bands(&self) -> [&Tensor; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|b| b.sq_norm()).sum()
    }
}

#[inline]
fn forward_block(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        0.5 * (a + b + c + d),
        0.5 * (a - b + c - d),
        0.5 * (a + b - c - d),
        0.5 * (a - b - c + d),
    ]
}

#[inline]
fn inverse_block(ll: f64, lh: f64, hl: f64, hh: f64) -> [f64; 4] {
    [
        0.5 * (ll + lh + hl + hh),
        0.5 * (ll - lh + hl - hh),
        0.5 * (ll + lh - hl - hh),
        0.5 * (ll - lh - hl + hh),
    ]
}

/// `x: [L, H, W]` with even `H, W` → `[4, L, H/2, W/2]` in band order ll, lh, hl, hh.
fn dwt_planes(x: &[f64], l: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let plane = l * h2 * w2;
    let mut out = vec![0.0; 4 * plane];
    for li in 0..l {
        let src = &x[li * h * w..(li + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let r0 = 2 * i * w + 2 * j;
                let r1 = r0 + w;
                let coeffs = forward_block(src[r0], src[r0 + 1], src[r1], src[r1 + 1]);
                let o = (li * h2 + i) * w2 + j;
                for (band, v) in coeffs.into_iter().enumerate() {
                    out[band * plane + o] = v;
                }
            }
        }
    }
    out
}

/// Inverse of [`dwt_planes`].
fn idwt_planes(bands: &[f64], l: usize, h2: usize, w2: usize) -> Vec<f64> {
    let (h, w) = (2 * h2, 2 * w2);
    let plane = l * h2 * w2;
    let mut out = vec![0.0; l * h * w];
    for li in 0..l {
        for i in 0..h2 {
            for j in 0..w2 {
                let o = (li * h2 + i) * w2 + j;
                let px = inverse_block(bands[o], bands[plane + o], bands[2 * plane + o], bands[3 * plane + o]);
                let r0 = li * h * w + 2 * i * w + 2 * j;
                let r1 = r0 + w;
                out[r0] = px[0];
                out[r0 + 1] = px[1];
                out[r1] = px[2];
                out[r1 + 1] = px[3];
            }
        }
    }
    out
}

/// Appends one reflected row and/or column (`[.., a, b, c]` → `[.., a, b, c, b]`).
fn reflect_pad(frame: &Tensor) -> (Tensor, bool, bool) {
    let &[c, h, w] = frame.shape() else { unreachable!("checked by caller") };
    let (ph, pw) = (h % 2 == 1, w % 2 == 1);
    if !ph && !pw {
        return (frame.clone(), false, false);
    }
    let (nh, nw) = (h + usize::from(ph), w + usize::from(pw));
    let reflect = |i: usize, n: usize| if i < n { i } else { n.saturating_sub(2) };
    let mut out = Tensor::zeros(&[c, nh, nw]);
    for ci in 0..c {
        for i in 0..nh {
            for j in 0..nw {
                out.set(&[ci, i, j], frame.get(&[ci, reflect(i, h), reflect(j, w)]));
            }
        }
    }
    (out, ph, pw)
}

/// Haar analysis of a `[C, H, W]` frame. Odd extents are reflect-padded by one.
pub fn haar_dwt2(frame: &Tensor) -> Result<WaveletSubbands> {
    let &[_, h, w] = frame.shape() else {
        return Err(Error::InvalidShape {
            op: "haar_dwt2",
            detail: format!("expected [C, H, W], got {:?}", frame.shape()),
        });
    };
    if frame.is_empty() || h == 0 || w == 0 {
        return Err(Error::invalid("haar_dwt2 on an empty frame"));
    }
    if h == 1 || w == 1 {
        return Err(Error::invalid("haar_dwt2 needs at least 2 rows and 2 columns"));
    }
    let (x, padded_rows, padded_cols) = reflect_pad(frame);
    let &[c, h, w] = x.shape() else { unreachable!() };
    let out = dwt_planes(x.data(), c, h, w);
    let plane = c * (h / 2) * (w / 2);
    let band = |k: usize| Tensor::new(vec![c, h / 2, w / 2], out[k * plane..(k + 1) * plane].to_vec()).expect("shape");
    Ok(WaveletSubbands {
        ll: band(0),
        lh: band(1),
        hl: band(2),
        hh: band(3),
        padded_rows,
        padded_cols,
    })
}

/// Haar synthesis; exact inverse of [`haar_dwt2`] including padding removal.
pub fn haar_idwt2(sb: &WaveletSubbands) -> Result<Tensor> {
    let shape = sb.ll.shape();
    if sb.bands().iter().any(|b| b.shape() != shape) {
        return Err(Error::ShapeMismatch {
            op: "haar_idwt2",
            lhs: shape.to_vec(),
            rhs: sb.bands().iter().find(|b| b.shape() != shape).map(|b| b.shape().to_vec()).unwrap_or_default(),
        });
    }
    let &[c, h2, w2] = shape else {
        return Err(Error::InvalidShape {
            op: "haar_idwt2",
            detail: format!("expected [C, H/2, W/2], got {:?}", shape),
        });
    };
    let stacked: Vec<f64> = sb.bands().iter().flat_map(|b| b.data().iter().copied()).collect();
    let full = Tensor::new(vec![c, 2 * h2, 2 * w2], idwt_planes(&stacked, c, h2, w2))?;
    if !sb.padded_rows && !sb.padded_cols {
        return Ok(full);
    }
    let (h, w) = (2 * h2 - usize::from(sb.padded_rows), 2 * w2 - usize::from(sb.padded_cols));
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out.set(&[ci, i, j], full.get(&[ci, i, j]));
            }
        }
    }
    Ok(out)
}

/// Transform of `[..., H, W]` (even extents) stacked band-first as `[4, ..., H/2, W/2]`.
pub fn haar_dwt_stacked(x: &Tensor) -> Result<Tensor> {
    let (lead, h, w) = split_planes("haar_dwt_stacked", x.shape())?;
    let mut shape = vec![4];
    shape.extend_from_slice(&x.shape()[..x.ndim() - 2]);
    shape.extend([h / 2, w / 2]);
    Tensor::new(shape, dwt_planes(x.data(), lead, h, w))
}

fn split_planes(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("need at least 2 axes, got {:?}", shape),
        });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == 0 || w == 0 || h % 2 == 1 || w % 2 == 1 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("spatial extents must be even and non-zero, got {h}x{w}"),
        });
    }
    Ok((shape[..shape.len() - 2].iter().product(), h, w))
}

impl Tape {
    /// Differentiable Haar analysis of `[..., H, W]` → `[4, ..., H/2, W/2]`.
    /// The transform is orthonormal, so the backward pass is the synthesis.
    pub fn haar_dwt(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (lead, h, w) = split_planes("haar_dwt", xv.shape())?;
        let out = haar_dwt_stacked(&xv)?;
        let in_shape = xv.shape().to_vec();
        self.push(
            "haar_dwt",
            out,
            &[x],
            Box::new(move |g, _| {
                let back = idwt_planes(g.data(), lead, h / 2, w / 2);
                vec![Some(Tensor::new(in_shape.clone(), back).expect("shape"))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap().into_reshape(&[1, rows.len(), rows[0].len()]).unwrap()
    }

    #[test]
    fn constant_frame_goes_to_ll() {
        let sb = haar_dwt2(&frame(&[&[1., 1.], &[1., 1.]])).unwrap();
        assert_eq!(sb.ll.data(), &[2.0]);
        assert_eq!([sb.lh.data(), sb.hl.data(), sb.hh.data()], [&[0.0][..]; 3]);
    }

    #[test]
    fn horizontal_detail_goes_to_lh() {
        let sb = haar_dwt2(&frame(&[&[1., -1.], &[1., -1.]])).unwrap();
        assert_eq!(sb.lh.data(), &[2.0]);
        assert_eq!([sb.ll.data(), sb.hl.data(), sb.hh.data()], [&[0.0][..]; 3]);
    }

    #[test]
    fn inverse_of_constant_case_and_zero_bands() {
        let mut sb = haar_dwt2(&frame(&[&[0., 0.], &[0., 0.]])).unwrap();
        assert!(haar_idwt2(&sb).unwrap().data().iter().all(|&v| v == 0.0));
        sb.ll = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(haar_idwt2(&sb).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn empty_frame_is_rejected() {
        assert!(haar_dwt2(&Tensor::zeros(&[1, 0, 4])).is_err());
        assert!(haar_dwt2(&Tensor::zeros(&[4, 4])).is_err());
    }

    #[test]
    fn band_shape_mismatch_is_rejected() {
        let mut sb = haar_dwt2(&Tensor::zeros(&[1, 4, 4])).unwrap();
        sb.hh = Tensor::zeros(&[1, 1, 2]);
        assert!(matches!(haar_idwt2(&sb), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn odd_extents_reflect_pad_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[2, 7, 5], 1.0, &mut rng);
        let sb = haar_dwt2(&x).unwrap();
        assert!(sb.padded_rows && sb.padded_cols);
        assert_eq!(sb.ll.shape(), &[2, 4, 3]);
        assert!(haar_idwt2(&sb).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn random_energy_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[1, 8, 8], 1.0, &mut rng);
        let sb = haar_dwt2(&x).unwrap();
        assert!((sb.energy() - x.sq_norm()).abs() < 1e-10);
    }

    #[test]
    fn stacked_matches_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[3, 2, 6, 4], 1.0, &mut rng);
        let s = haar_dwt_stacked(&x).unwrap();
        assert_eq!(s.shape(), &[4, 3, 2, 3, 2]);
        let f1 = Tensor::new(vec![2, 6, 4], x.data()[48..96].to_vec()).unwrap();
        let sb = haar_dwt2(&f1).unwrap();
        for (band, t) in sb.bands().iter().enumerate() {
            for i in 0..t.len() {
                let (c, r) = (i / 6, i % 6);
                assert_eq!(s.get(&[band, 1, c, r / 2, r % 2]), t.data()[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[2, 6, 8], 1.0, &mut rng);
            let y = Tensor::randn(&[2, 6, 8], 1.0, &mut rng);
            let z = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
            let (dx, dy, dz) = (haar_dwt2(&x).unwrap(), haar_dwt2(&y).unwrap(), haar_dwt2(&z).unwrap());
            for k in 0..4 {
                let combo = dx.bands()[k].zip_map(dy.bands()[k], |a, b| alpha * a + beta * b).unwrap();
                prop_assert!(combo.max_abs_diff(dz.bands()[k]) < 1e-12);
            }
        }

        #[test]
        fn perfect_reconstruction(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[1, 2 * h, 2 * w], 1.0, &mut rng);
            let back = haar_idwt2(&haar_dwt2(&x).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }
}
