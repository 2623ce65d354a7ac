//! Single-frame self-attention, temporal-fusion attention over a frame
//! sequence, and cross-branch attention from CNN features into token features.
//!
//! Projections follow the row-vector convention `q = x · Wqᵀ`. The attention
//! ops return `Softmax(Q·Kᵀ/√d)·V` without the output projection; transformer
//! blocks apply `w_out` themselves.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    /// Gaussian in time times a Gaussian on mean frame intensity difference.
    Bilateral,
    /// `exp(−|t−τ|/σ)`.
    Laplacian,
    /// Every frame takes keys/values from frame 0 (cross-frame attention).
    FirstFrame,
}

/// Construction parameters for a [`TemporalKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma: f64,
    pub window: usize,
    pub normalized: bool,
    /// Intensity bandwidth of the bilateral range term.
    #[serde(default = "default_range_sigma")]
    pub range_sigma: f64,
}

fn default_range_sigma() -> f64 {
    0.1
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Gaussian,
            sigma: 1.0,
            window: 5,
            normalized: true,
            range_sigma: default_range_sigma(),
        }
    }
}

impl KernelSpec {
    /// Builds the `T × T` kernel; `frame_means` feeds the bilateral range term.
    pub fn build(&self, frames: usize, frame_means: Option<&[f64]>) -> Result<TemporalKernel> {
        match self.kind {
            KernelKind::Gaussian => gaussian_kernel(frames, self.sigma, self.window, self.normalized),
            KernelKind::Laplacian => laplacian_kernel(frames, self.sigma, self.window, self.normalized),
            KernelKind::Bilateral => {
                let means = frame_means.ok_or_else(|| Error::invalid("bilateral kernel needs frame intensities"))?;
                bilateral_kernel(frames, self.sigma, self.window, self.normalized, means, self.range_sigma)
            }
            KernelKind::FirstFrame => TemporalKernel::first_frame(frames),
        }
    }
}

/// `weights[t][τ] = φ(t, τ)`, zero outside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalKernel {
    pub weights: Tensor,
    pub sigma: f64,
    pub window: usize,
    pub normalized: bool,
}

impl TemporalKernel {
    pub fn frames(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn first_frame(frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("kernel needs at least one frame"));
        }
        let mut w = Tensor::zeros(&[frames, frames]);
        for t in 0..frames {
            w.set(&[t, 0], 1.0);
        }
        Ok(Self {
            weights: w,
            sigma: 0.0,
            window: 2 * frames - 1,
            normalized: true,
        })
    }
}

fn validate_kernel_args(frames: usize, sigma: f64, window: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::invalid("kernel needs at least one frame"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("kernel sigma must be positive, got {sigma}")));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel window must be odd and positive, got {window}")));
    }
    Ok(())
}

fn windowed_kernel(
    frames: usize,
    sigma: f64,
    window: usize,
    normalized: bool,
    phi: impl Fn(usize, usize) -> f64,
) -> Result<TemporalKernel> {
    validate_kernel_args(frames, sigma, window)?;
    let half = window / 2;
    let mut w = Tensor::zeros(&[frames, frames]);
    for t in 0..frames {
        for tau in 0..frames {
            if t.abs_diff(tau) <= half {
                w.set(&[t, tau], phi(t, tau));
            }
        }
        if normalized {
            let s: f64 = w.data()[t * frames..(t + 1) * frames].iter().sum();
            w.data_mut()[t * frames..(t + 1) * frames].iter_mut().for_each(|x| *x /= s);
        }
    }
    Ok(TemporalKernel {
        weights: w,
        sigma,
        window,
        normalized,
    })
}

/// `φ(t, τ) = exp(−(t−τ)² / (2σ²))` inside the window.
pub fn gaussian_kernel(frames: usize, sigma: f64, window: usize, normalized: bool) -> Result<TemporalKernel> {
    windowed_kernel(frames, sigma, window, normalized, |t, tau| {
        let dt = t as f64 - tau as f64;
        (-(dt * dt) / (2.0 * sigma * sigma)).exp()
    })
}

pub fn laplacian_kernel(frames: usize, sigma: f64, window: usize, normalized: bool) -> Result<TemporalKernel> {
    windowed_kernel(frames, sigma, window, normalized, |t, tau| {
        (-(t as f64 - tau as f64).abs() / sigma).exp()
    })
}

pub fn bilateral_kernel(
    frames: usize,
    sigma: f64,
    window: usize,
    normalized: bool,
    frame_means: &[f64],
    range_sigma: f64,
) -> Result<TemporalKernel> {
    if frame_means.len() != frames {
        return Err(Error::invalid(format!(
            "bilateral kernel got {} frame intensities for {frames} frames",
            frame_means.len()
        )));
    }
    if !(range_sigma > 0.0) {
        return Err(Error::invalid("bilateral range sigma must be positive"));
    }
    windowed_kernel(frames, sigma, window, normalized, |t, tau| {
        let dt = t as f64 - tau as f64;
        let di = frame_means[t] - frame_means[tau];
        (-(dt * dt) / (2.0 * sigma * sigma) - di * di / (2.0 * range_sigma * range_sigma)).exp()
    })
}

/// Square projection matrices of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub w_out: Tensor,
}

impl AttentionWeights {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor, w_out: Tensor) -> Result<Self> {
        let d = wq.shape().first().copied().unwrap_or(0);
        for w in [&wq, &wk, &wv, &w_out] {
            if w.shape() != [d, d] {
                return Err(Error::ShapeMismatch {
                    op: "attention_weights",
                    lhs: vec![d, d],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(Self { wq, wk, wv, w_out })
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        Self {
            wq: Tensor::randn(&[d, d], s, rng),
            wk: Tensor::randn(&[d, d], s, rng),
            wv: Tensor::randn(&[d, d], s, rng),
            w_out: Tensor::randn(&[d, d], s, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    /// Records the matrices as leaves.
    pub fn record(&self, tape: &Tape, requires_grad: bool) -> Result<AttnVars> {
        Ok(AttnVars {
            wq: tape.leaf(self.wq.clone(), requires_grad)?,
            wk: tape.leaf(self.wk.clone(), requires_grad)?,
            wv: tape.leaf(self.wv.clone(), requires_grad)?,
            w_out: Some(tape.leaf(self.w_out.clone(), requires_grad)?),
            heads: 1,
        })
    }
}

/// Attention projections already recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    /// Output projection, applied by the caller.
    pub w_out: Option<Var>,
    pub heads: usize,
}

/// `Softmax(Q·Kᵀ/√d_h)·V` over groups: `q: [G, N, d]`, `k, v: [G, M, d]`.
fn attend(tape: &Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (sq, sk) = (tape.shape(q), tape.shape(k));
    let (g, n, d) = (sq[0], sq[1], sq[2]);
    let m = sk[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!("{heads} heads do not divide dimension {d}")));
    }
    let dh = d / heads;
    let split = |x: Var, len: usize| -> Result<Var> {
        if heads == 1 {
            return Ok(x);
        }
        let x = tape.reshape(x, &[g, len, heads, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[g * heads, len, dh])
    };
    let (qh, kh, vh) = (split(q, n)?, split(k, m)?, split(v, m)?);
    let scores = tape.bmm(qh, kh, false, true)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let p = tape.softmax(scores, 2)?;
    let o = tape.bmm(p, vh, false, false)?;
    if heads == 1 {
        return Ok(o);
    }
    let o = tape.reshape(o, &[g, heads, n, dh])?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    tape.reshape(o, &[g, n, d])
}

/// Flattens all leading axes of `[..., N, d]` into one group axis.
fn as_groups(tape: &Tape, x: Var, op: &'static str) -> Result<(Var, Vec<usize>)> {
    let s = tape.shape(x);
    if s.len() < 2 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("expected [..., N, d], got {:?}", s),
        });
    }
    let g = s[..s.len() - 2].iter().product();
    Ok((tape.reshape(x, &[g, s[s.len() - 2], s[s.len() - 1]])?, s))
}

fn check_dim(tape: &Tape, x: Var, w: &AttnVars, op: &'static str) -> Result<usize> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    let sw = tape.shape(w.wq);
    if sw != [d, d] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: tape.shape(x),
            rhs: sw,
        });
    }
    Ok(d)
}

impl AttnVars {
    /// Plain self-attention over the token axis of `[..., N, d]`.
    pub fn self_attention(&self, tape: &Tape, x: Var) -> Result<Var> {
        check_dim(tape, x, self, "self_attention")?;
        let (xg, shape) = as_groups(tape, x, "self_attention")?;
        let q = tape.linear(xg, self.wq)?;
        let k = tape.linear(xg, self.wk)?;
        let v = tape.linear(xg, self.wv)?;
        let o = attend(tape, q, k, v, self.heads)?;
        tape.reshape(o, &shape)
    }

    /// Temporal-fusion attention on `[T, N, d]` or `[B, T, N, d]`: every frame's
    /// queries attend to the kernel-weighted mixture of all frames' keys and values.
    pub fn temporal_fusion_attention(&self, tape: &Tape, x: Var, kernel: &TemporalKernel) -> Result<Var> {
        let d = check_dim(tape, x, self, "temporal_fusion_attention")?;
        let shape = tape.shape(x);
        let (b, t, n) = match *shape.as_slice() {
            [t, n, _] => (1, t, n),
            [b, t, n, _] => (b, t, n),
            _ => {
                return Err(Error::InvalidShape {
                    op: "temporal_fusion_attention",
                    detail: format!("expected [B, T, N, d], got {:?}", shape),
                })
            }
        };
        if kernel.frames() != t {
            return Err(Error::invalid(format!(
                "temporal kernel covers {} frames but the clip has {t}",
                kernel.frames()
            )));
        }
        let phi = tape.constant(kernel.weights.clone())?;
        self.fuse_frames(tape, x, phi, (b, t, n, d))
    }

    /// Kernel-mixed attention with `phi` either `[T, T]` or per-clip `[B, T, T]`.
    pub fn temporal_fusion_attention_with(&self, tape: &Tape, x: Var, phi: Var) -> Result<Var> {
        let d = check_dim(tape, x, self, "temporal_fusion_attention")?;
        let shape = tape.shape(x);
        let &[b, t, n, _] = shape.as_slice() else {
            return Err(Error::InvalidShape {
                op: "temporal_fusion_attention",
                detail: format!("expected [B, T, N, d], got {:?}", shape),
            });
        };
        let ps = tape.shape(phi);
        if !(ps == [t, t] || ps == [b, t, t]) {
            return Err(Error::ShapeMismatch {
                op: "temporal_fusion_attention",
                lhs: shape,
                rhs: ps,
            });
        }
        self.fuse_frames(tape, x, phi, (b, t, n, d))
    }

    fn fuse_frames(&self, tape: &Tape, x: Var, phi: Var, (b, t, n, d): (usize, usize, usize, usize)) -> Result<Var> {
        let shape = tape.shape(x);
        let q = tape.linear(x, self.wq)?;
        let k = tape.linear(x, self.wk)?;
        let v = tape.linear(x, self.wv)?;
        let mix = |y: Var| -> Result<Var> {
            let y = tape.reshape(y, &[b, t, n * d])?;
            let y = tape.bmm(phi, y, false, false)?;
            tape.reshape(y, &[b * t, n, d])
        };
        let (k_hat, v_hat) = (mix(k)?, mix(v)?);
        let q = tape.reshape(q, &[b * t, n, d])?;
        let o = attend(tape, q, k_hat, v_hat, self.heads)?;
        tape.reshape(o, &shape)
    }

    /// Attention across frames at each token position (`[B, T, N, d]`).
    pub fn temporal_attention(&self, tape: &Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 4 {
            return Err(Error::InvalidShape {
                op: "temporal_attention",
                detail: format!("expected [B, T, N, d], got {:?}", s),
            });
        }
        let xt = tape.permute(x, &[0, 2, 1, 3])?;
        let o = self.self_attention(tape, xt)?;
        tape.permute(o, &[0, 2, 1, 3])
    }

    /// `f_v + Softmax(Q(f_v)·K(f_c)ᵀ/√d)·V(f_c)` with `f_v: [..., N, d]`, `f_c: [..., M, d]`.
    pub fn cross_branch_attention(&self, tape: &Tape, f_v: Var, f_c: Var) -> Result<Var> {
        let (sv, sc) = (tape.shape(f_v), tape.shape(f_c));
        if sv.len() < 2 || sc.len() != sv.len() || sv.last() != sc.last() || sv[..sv.len() - 2] != sc[..sc.len() - 2] {
            return Err(Error::ShapeMismatch {
                op: "cross_branch_attention",
                lhs: sv,
                rhs: sc,
            });
        }
        check_dim(tape, f_v, self, "cross_branch_attention")?;
        let (vg, shape) = as_groups(tape, f_v, "cross_branch_attention")?;
        let (cg, _) = as_groups(tape, f_c, "cross_branch_attention")?;
        let q = tape.linear(vg, self.wq)?;
        let k = tape.linear(cg, self.wk)?;
        let v = tape.linear(cg, self.wv)?;
        let o = attend(tape, q, k, v, self.heads)?;
        let o = tape.reshape(o, &shape)?;
        tape.add(f_v, o)
    }
}

fn run_once(f: impl FnOnce(&Tape) -> Result<Var>) -> Result<Tensor> {
    let tape = Tape::new();
    let out = f(&tape)?;
    let v = tape.value(out);
    Ok((*v).clone())
}

/// Value-only self-attention of `x: [N, d]`.
pub fn self_attention(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    run_once(|tape| {
        let vars = w.record(tape, false)?;
        let xv = tape.constant(x.clone())?;
        vars.self_attention(tape, xv)
    })
}

/// Value-only temporal-fusion attention of `x: [T, N, d]`.
pub fn temporal_fusion_attention(x: &Tensor, w: &AttentionWeights, kernel: &TemporalKernel) -> Result<Tensor> {
    run_once(|tape| {
        let vars = w.record(tape, false)?;
        let xv = tape.constant(x.clone())?;
        vars.temporal_fusion_attention(tape, xv, kernel)
    })
}

/// Value-only cross-branch attention.
pub fn cross_branch_attention(f_v: &Tensor, f_c: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    run_once(|tape| {
        let vars = w.record(tape, false)?;
        let a = tape.constant(f_v.clone())?;
        let b = tape.constant(f_c.clone())?;
        vars.cross_branch_attention(tape, a, b)
    })
}
