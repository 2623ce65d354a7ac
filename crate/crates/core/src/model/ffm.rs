//! Frequency branch: a fixed frequency split of each frame followed by four
//! stride-2 convolution stages whose outputs are projected to the token width.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::config::{FfmTransform, ModelConfig};
use super::params::Bound;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Tape, Tensor, Var};
use crate::wavelet::haar_dwt_stacked;

/// `frames: [L, C, H, W]` → channels-last `[L, H/2, W/2, 4C]`, channel index `band * C + c`.
pub fn frequency_input(frames: &Tensor, transform: FfmTransform) -> Result<Tensor> {
    let &[l, c, h, w] = frames.shape() else {
        return Err(Error::InvalidShape {
            op: "frequency_input",
            detail: format!("expected [L, C, H, W], got {:?}", frames.shape()),
        });
    };
    if h % 2 == 1 || w % 2 == 1 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("frequency branch needs even extents, got {h}x{w}")));
    }
    // Band-first layout [4, L, C, H/2, W/2].
    let stacked = match transform {
        FfmTransform::Wavelet => haar_dwt_stacked(frames)?,
        FfmTransform::Raw => space_to_depth(frames, l, c, h, w),
        FfmTransform::Fourier => fourier_bands(frames, l, c, h, w),
    };
    stacked
        .permute(&[1, 3, 4, 0, 2])?
        .into_reshape(&[l, h / 2, w / 2, 4 * c])
}

fn space_to_depth(x: &Tensor, l: usize, c: usize, h: usize, w: usize) -> Tensor {
    let (h2, w2) = (h / 2, w / 2);
    let plane = l * c * h2 * w2;
    let mut out = vec![0.0; 4 * plane];
    let xd = x.data();
    for p in 0..l * c {
        for i in 0..h2 {
            for j in 0..w2 {
                let r0 = p * h * w + 2 * i * w + 2 * j;
                let o = (p * h2 + i) * w2 + j;
                out[o] = xd[r0];
                out[plane + o] = xd[r0 + 1];
                out[2 * plane + o] = xd[r0 + w];
                out[3 * plane + o] = xd[r0 + w + 1];
            }
        }
    }
    Tensor::new(vec![4, l, c, h2, w2], out).expect("shape")
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in buf.chunks_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = buf[i * w + j];
        }
        col.process(&mut column);
        for i in 0..h {
            buf[i * w + j] = column[i];
        }
    }
}

/// Splits the spectrum into four quadrant bands (low/high vertical × low/high
/// horizontal frequency), returns each band to image space and average-pools 2×2.
fn fourier_bands(x: &Tensor, l: usize, c: usize, h: usize, w: usize) -> Tensor {
    let (h2, w2) = (h / 2, w / 2);
    let plane = l * c * h2 * w2;
    let mut out = vec![0.0; 4 * plane];
    let low = |k: usize, n: usize| k.min(n - k) < n.div_ceil(4);
    let norm = 1.0 / (h * w) as f64;
    for p in 0..l * c {
        let mut spec: Vec<Complex<f64>> = x.data()[p * h * w..(p + 1) * h * w]
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        fft2(&mut spec, h, w, false);
        for band in 0..4 {
            let (hi_y, hi_x) = (band >= 2, band % 2 == 1);
            let mut b: Vec<Complex<f64>> = spec
                .iter()
                .enumerate()
                .map(|(idx, &z)| {
                    let (ky, kx) = (idx / w, idx % w);
                    if low(ky, h) != hi_y && low(kx, w) != hi_x {
                        z
                    } else {
                        Complex::new(0.0, 0.0)
                    }
                })
                .collect();
            fft2(&mut b, h, w, true);
            for i in 0..h2 {
                for j in 0..w2 {
                    let r0 = 2 * i * w + 2 * j;
                    let s = b[r0].re + b[r0 + 1].re + b[r0 + w].re + b[r0 + w + 1].re;
                    out[band * plane + (p * h2 + i) * w2 + j] = 0.25 * s * norm;
                }
            }
        }
    }
    Tensor::new(vec![4, l, c, h2, w2], out).expect("shape")
}

/// Four stage features `[L, M_s, d]` from a channels-last frequency input.
pub fn ffm_branch(tape: &Tape, params: &Bound, cfg: &ModelConfig, input: Var) -> Result<Vec<Var>> {
    let mut h = input;
    let mut stages = Vec::with_capacity(4);
    for s in 0..4 {
        h = tape.conv2d(h, params.get(&format!("ffm.conv.{s}"))?, Conv2dSpec::down2())?;
        h = tape.gelu(h)?;
        let p = tape.linear(h, params.get(&format!("ffm.proj.{s}"))?)?;
        let sh = tape.shape(p);
        stages.push(tape.reshape(p, &[sh[0], sh[1] * sh[2], cfg.embed_dim])?);
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_bands_sum_to_pooled_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng);
        let f = frequency_input(&x, FfmTransform::Fourier).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let total: f64 = (0..4).map(|b| f.get(&[0, i, j, b])).sum();
                let pooled = 0.25
                    * (x.get(&[0, 0, 2 * i, 2 * j])
                        + x.get(&[0, 0, 2 * i, 2 * j + 1])
                        + x.get(&[0, 0, 2 * i + 1, 2 * j])
                        + x.get(&[0, 0, 2 * i + 1, 2 * j + 1]));
                assert!((total - pooled).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_is_all_low_band() {
        let x = Tensor::full(&[1, 1, 8, 8], 0.5);
        let f = frequency_input(&x, FfmTransform::Fourier).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((f.get(&[0, i, j, 0]) - 0.5).abs() < 1e-12);
                for b in 1..4 {
                    assert!(f.get(&[0, i, j, b]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn raw_and_wavelet_layouts() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let raw = frequency_input(&x, FfmTransform::Raw).unwrap();
        assert_eq!(raw.shape(), &[1, 1, 1, 4]);
        assert_eq!(raw.data(), &[1.0, 2.0, 3.0, 4.0]);
        let wav = frequency_input(&x, FfmTransform::Wavelet).unwrap();
        assert_eq!(wav.data(), &[5.0, -1.0, -2.0, 0.0]);
    }

    #[test]
    fn odd_extents_rejected() {
        assert!(frequency_input(&Tensor::zeros(&[1, 1, 3, 4]), FfmTransform::Raw).is_err());
    }
}
