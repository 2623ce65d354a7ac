//! Channels-last (NHWC) convolution and bilinear upsampling.

use super::linalg::{gemm, MatRef};
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn same() -> Self {
        Self { stride: 1, padding: 1 }
    }

    pub fn down2() -> Self {
        Self { stride: 2, padding: 1 }
    }

    pub fn pointwise() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn kc(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.b * self.ho * self.wo
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap of output row `row`.
    #[inline]
    fn for_taps(&self, row: usize, mut f: impl FnMut(usize, usize)) {
        let ox = row % self.wo;
        let oy = (row / self.wo) % self.ho;
        let bi = row / (self.wo * self.ho);
        for ky in 0..self.kh {
            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            for kx in 0..self.kw {
                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                if ix < 0 || ix >= self.w as isize {
                    continue;
                }
                let col = (ky * self.kw + kx) * self.c;
                let src = ((bi * self.h + iy as usize) * self.w + ix as usize) * self.c;
                f(col, src);
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let kc = self.kc();
        let mut cols = vec![0.0; self.rows() * kc];
        for row in 0..self.rows() {
            let dst = &mut cols[row * kc..(row + 1) * kc];
            self.for_taps(row, |col, src| dst[col..col + self.c].copy_from_slice(&x[src..src + self.c]));
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let kc = self.kc();
        let mut x = vec![0.0; self.b * self.h * self.w * self.c];
        for row in 0..self.rows() {
            let srcrow = &cols[row * kc..(row + 1) * kc];
            self.for_taps(row, |col, dst| {
                for (a, b) in x[dst..dst + self.c].iter_mut().zip(&srcrow[col..col + self.c]) {
                    *a += b;
                }
            });
        }
        x
    }
}

/// Bilinear (half-pixel centred) interpolation taps along one axis.
fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Tape {
    /// `x: [B,H,W,C]`, `w: [O,kh,kw,C]` → `[B,Ho,Wo,O]`, no bias.
    pub fn conv2d(&self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (&[b, h, wd, c], &[o, kh, kw, wc]) = (xv.shape(), wv.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        };
        if c != wc || spec.stride == 0 || h + 2 * spec.padding < kh || wd + 2 * spec.padding < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let geom = ConvGeom {
            b,
            h,
            w: wd,
            c,
            o,
            kh,
            kw,
            ho: (h + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (wd + 2 * spec.padding - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        };
        let cols = geom.im2col(xv.data());
        let (m, kc) = (geom.rows(), geom.kc());
        let mut out = vec![0.0; m * o];
        gemm(m, kc, o, MatRef::new(&cols, m, kc, false), MatRef::new(wv.data(), o, kc, true), &mut out, 0.0);
        let out = Tensor::new(vec![b, geom.ho, geom.wo, o], out)?;
        let x_shape = xv.shape().to_vec();
        let w_shape = wv.shape().to_vec();
        self.push(
            "conv2d",
            out,
            &[x, w],
            Box::new(move |g, need| {
                let gd = g.data();
                let gw = need[1].then(|| {
                    let mut dw = vec![0.0; geom.o * kc];
                    gemm(geom.o, m, kc, MatRef::new(gd, m, geom.o, true), MatRef::new(&cols, m, kc, false), &mut dw, 0.0);
                    Tensor::new(w_shape.clone(), dw).expect("shape")
                });
                let gx = need[0].then(|| {
                    let mut dcols = vec![0.0; m * kc];
                    gemm(m, geom.o, kc, MatRef::new(gd, m, geom.o, false), MatRef::new(wv.data(), geom.o, kc, false), &mut dcols, 0.0);
                    Tensor::new(x_shape.clone(), geom.col2im(&dcols)).expect("shape")
                });
                vec![gx, gw]
            }),
        )
    }

    /// Bilinear upsampling of `[B,H,W,C]` by an integer factor.
    pub fn upsample_bilinear(&self, x: Var, factor: usize) -> Result<Var> {
        let xv = self.value(x);
        let &[b, h, w, c] = xv.shape() else {
            return Err(Error::InvalidShape {
                op: "upsample_bilinear",
                detail: format!("expected NHWC, got {:?}", xv.shape()),
            });
        };
        if factor == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("upsample factor and extents must be positive"));
        }
        if factor == 1 {
            return Ok(x);
        }
        let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![0.0; b * ho * wo * c];
        let xd = xv.data();
        for bi in 0..b {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let dst = ((bi * ho + oy) * wo + ox) * c;
                    let taps = [
                        ((y0, x0), (1.0 - fy) * (1.0 - fx)),
                        ((y0, x1), (1.0 - fy) * fx),
                        ((y1, x0), fy * (1.0 - fx)),
                        ((y1, x1), fy * fx),
                    ];
                    for ((iy, ix), wt) in taps {
                        let src = ((bi * h + iy) * w + ix) * c;
                        for k in 0..c {
                            out[dst + k] += wt * xd[src + k];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, ho, wo, c], out)?;
        let x_shape = xv.shape().to_vec();
        self.push(
            "upsample_bilinear",
            out,
            &[x],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut dx = vec![0.0; b * h * w * c];
                for bi in 0..b {
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let src = ((bi * ho + oy) * wo + ox) * c;
                            let taps = [
                                ((y0, x0), (1.0 - fy) * (1.0 - fx)),
                                ((y0, x1), (1.0 - fy) * fx),
                                ((y1, x0), fy * (1.0 - fx)),
                                ((y1, x1), fy * fx),
                            ];
                            for ((iy, ix), wt) in taps {
                                let dst = ((bi * h + iy) * w + ix) * c;
                                for k in 0..c {
                                    dx[dst + k] += wt * gd[src + k];
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(x_shape.clone(), dx).expect("shape"))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_ref(x: &Tensor, w: &Tensor, s: usize, p: usize) -> Tensor {
        let &[b, h, wd, c] = x.shape() else { panic!() };
        let &[o, kh, kw, _] = w.shape() else { panic!() };
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (wd + 2 * p - kw) / s + 1;
        let mut y = Tensor::zeros(&[b, ho, wo, o]);
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for oc in 0..o {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ic in 0..c {
                                    acc += x.get(&[bi, iy as usize, ix as usize, ic]) * w.get(&[oc, ky, kx, ic]);
                                }
                            }
                        }
                        y.set(&[bi, oy, ox, oc], acc);
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[2, 6, 5, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        for spec in [Conv2dSpec::same(), Conv2dSpec::down2(), Conv2dSpec::pointwise()] {
            let w = if spec == Conv2dSpec::pointwise() {
                Tensor::randn(&[4, 1, 1, 3], 1.0, &mut rng)
            } else {
                w.clone()
            };
            let tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()).unwrap(), tape.constant(w.clone()).unwrap());
            let y = tape.value(tape.conv2d(xv, wv, spec).unwrap());
            let r = conv_ref(&x, &w, spec.stride, spec.padding);
            assert_eq!(y.shape(), r.shape());
            assert!(y.max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 3, 4, 2], 0.7)).unwrap();
        let y = tape.value(tape.upsample_bilinear(x, 2).unwrap());
        assert_eq!(y.shape(), &[1, 6, 8, 2]);
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_interior_is_midpoint_blend() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 1], vec![0.0, 1.0]).unwrap()).unwrap();
        let y = tape.value(tape.upsample_bilinear(x, 2).unwrap());
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
