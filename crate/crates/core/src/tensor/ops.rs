use std::rc::Rc;

use super::linalg::{gemm, MatRef};
use super::{inverse_perm, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use super::conv::Conv2dSpec;
pub use crate::train::loss::SegLossTarget;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// (outer, axis length, inner) split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Batch layout of a matmul operand: (batch, stored rows, stored cols).
fn mat_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(Error::InvalidShape {
            op,
            detail: format!("expected rank 2 or 3, got {:?}", shape),
        }),
    }
}

impl Tape {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("add", &av, &bv)?;
        let out = av.zip_map(&bv, |x, y| x + y)?;
        self.push("add", out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("sub", &av, &bv)?;
        let out = av.zip_map(&bv, |x, y| x - y)?;
        self.push("sub", out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("mul", &av, &bv)?;
        let out = av.zip_map(&bv, |x, y| x * y)?;
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&bv, |x, y| x * y).expect("shape")),
                    need[1].then(|| g.zip_map(&av, |x, y| x * y).expect("shape")),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, &[a], Box::new(move |g, _| vec![Some(g.map(|x| x * s))]))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape (bias, positional table).
    pub fn add_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::ShapeMismatch {
                op: "add_bcast",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let nb = bv.len();
        let mut out = (*av).clone();
        for chunk in out.data_mut().chunks_mut(nb) {
            for (x, y) in chunk.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let b_shape = sb.to_vec();
        self.push(
            "add_bcast",
            out,
            &[a, b],
            Box::new(move |g, need| {
                let gb = need[1].then(|| {
                    let mut acc = Tensor::zeros(&b_shape);
                    for chunk in g.data().chunks(nb) {
                        for (x, y) in acc.data_mut().iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                    acc
                });
                vec![Some(g.clone()), gb]
            }),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let out = av.reshape(shape).map_err(|_| Error::InvalidShape {
            op: "reshape",
            detail: format!("{:?} -> {:?}", av.shape(), shape),
        })?;
        let orig = av.shape().to_vec();
        self.push(
            "reshape",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.reshape(&orig).expect("reshape back"))]),
        )
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let inv = inverse_perm(axes);
        self.push(
            "permute",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.permute(&inv).expect("inverse permute"))]),
        )
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        self.push(
            "sum",
            Tensor::scalar(av.sum()),
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = av.map(gelu_scalar);
        self.push(
            "gelu",
            out,
            &[a],
            Box::new(move |g, _| {
                vec![Some(g.zip_map(&av, |gi, x| gi * gelu_grad_scalar(x)).expect("shape"))]
            }),
        )
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        if axis >= av.ndim() {
            return Err(Error::InvalidShape {
                op: "softmax",
                detail: format!("axis {axis} out of range for {:?}", av.shape()),
            });
        }
        let (outer, len, inner) = axis_split(av.shape(), axis);
        let mut y = (*av).clone();
        softmax_inplace(y.data_mut(), outer, len, inner);
        let yr = Rc::new(y.clone());
        self.push(
            "softmax",
            y,
            &[a],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(yr.shape());
                let (gd, yd, dd) = (g.data(), yr.data(), dx.data_mut());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[base + j * inner] * yd[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dd[p] = yd[p] * (gd[p] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn log_softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        if axis >= av.ndim() {
            return Err(Error::InvalidShape {
                op: "log_softmax",
                detail: format!("axis {axis} out of range for {:?}", av.shape()),
            });
        }
        let (outer, len, inner) = axis_split(av.shape(), axis);
        let mut y = (*av).clone();
        let yd = y.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let m = (0..len).map(|j| yd[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..len).map(|j| (yd[base + j * inner] - m).exp()).sum::<f64>().ln();
                for j in 0..len {
                    yd[base + j * inner] -= lse;
                }
            }
        }
        let yr = Rc::new(y.clone());
        self.push(
            "log_softmax",
            y,
            &[a],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(yr.shape());
                let (gd, yd, dd) = (g.data(), yr.data(), dx.data_mut());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let gs: f64 = (0..len).map(|j| gd[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dd[p] = gd[p] - yd[p].exp() * gs;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = *xv.shape().last().ok_or_else(|| Error::invalid("layer_norm on scalar"))?;
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let shape = xv.shape().to_vec();
        self.push(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dx = vec![0.0; gd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let gr = &gd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dbeta[j] += gr[j];
                        dgamma[j] += gr[j] * hr[j];
                        let dh = gr[j] * gv.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    if need[0] {
                        for j in 0..d {
                            let dh = gr[j] * gv.data()[j];
                            dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(shape.clone(), dx).expect("shape")),
                    need[1].then(|| Tensor::new(vec![d], dgamma).expect("shape")),
                    need[2].then(|| Tensor::new(vec![d], dbeta).expect("shape")),
                ]
            }),
        )
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        self.bmm(a, b, false, false)
    }

    /// Batched product `op(a) · op(b)` over rank-2 or rank-3 operands, where
    /// `op` optionally transposes the trailing two axes. A batch extent of 1
    /// (or a rank-2 operand) broadcasts against the other side.
    pub fn bmm(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ba, ar, ac) = mat_layout("bmm", av.shape())?;
        let (bb, br, bc) = mat_layout("bmm", bv.shape())?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        let batch = ba.max(bb);
        if k != k2 || (ba != bb && ba != 1 && bb != 1) {
            return Err(Error::ShapeMismatch {
                op: "bmm",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let rank2 = av.ndim() == 2 && bv.ndim() == 2;
        let (sa_len, sb_len) = (ar * ac, br * bc);
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let ai = if ba == 1 { 0 } else { i };
            let bi = if bb == 1 { 0 } else { i };
            gemm(
                m,
                k,
                n,
                MatRef::new(&av.data()[ai * sa_len..(ai + 1) * sa_len], ar, ac, ta),
                MatRef::new(&bv.data()[bi * sb_len..(bi + 1) * sb_len], br, bc, tb),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let out_shape = if rank2 { vec![m, n] } else { vec![batch, m, n] };
        let out = Tensor::new(out_shape, out)?;
        self.push(
            "bmm",
            out,
            &[a, b],
            Box::new(move |g, need| {
                let gd = g.data();
                let ga = need[0].then(|| {
                    let mut da = vec![0.0; ba * sa_len];
                    for i in 0..batch {
                        let ai = if ba == 1 { 0 } else { i };
                        let bi = if bb == 1 { 0 } else { i };
                        let beta = if ba == 1 && i > 0 { 1.0 } else { 0.0 };
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bsl = &bv.data()[bi * sb_len..(bi + 1) * sb_len];
                        let dst = &mut da[ai * sa_len..(ai + 1) * sa_len];
                        if ta {
                            gemm(k, n, m, MatRef::new(bsl, br, bc, tb), MatRef::new(gi, m, n, true), dst, beta);
                        } else {
                            gemm(m, n, k, MatRef::new(gi, m, n, false), MatRef::new(bsl, br, bc, !tb), dst, beta);
                        }
                    }
                    Tensor::new(av.shape().to_vec(), da).expect("shape")
                });
                let gb = need[1].then(|| {
                    let mut db = vec![0.0; bb * sb_len];
                    for i in 0..batch {
                        let ai = if ba == 1 { 0 } else { i };
                        let bi = if bb == 1 { 0 } else { i };
                        let beta = if bb == 1 && i > 0 { 1.0 } else { 0.0 };
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let asl = &av.data()[ai * sa_len..(ai + 1) * sa_len];
                        let dst = &mut db[bi * sb_len..(bi + 1) * sb_len];
                        if tb {
                            gemm(n, m, k, MatRef::new(gi, m, n, true), MatRef::new(asl, ar, ac, ta), dst, beta);
                        } else {
                            gemm(k, m, n, MatRef::new(asl, ar, ac, !ta), MatRef::new(gi, m, n, false), dst, beta);
                        }
                    }
                    Tensor::new(bv.shape().to_vec(), db).expect("shape")
                });
                vec![ga, gb]
            }),
        )
    }

    /// `x · wᵀ` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.last() != Some(&sw[1]) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let rows = sx[..sx.len() - 1].iter().product();
        let x2 = self.reshape(x, &[rows, sw[1]])?;
        let y = self.bmm(x2, w, false, true)?;
        let mut out_shape = sx.clone();
        *out_shape.last_mut().expect("rank >= 1") = sw[0];
        self.reshape(y, &out_shape)
    }
}

pub(crate) fn softmax_inplace(d: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let m = (0..len).map(|j| d[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..len {
                let p = base + j * inner;
                d[p] = (d[p] - m).exp();
                s += d[p];
            }
            for j in 0..len {
                d[base + j * inner] /= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2)).unwrap();
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);
        let z = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        let p0 = tape.matmul(i2, z).unwrap();
        assert!(tape.value(p0).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let tape = Tape::new();
        let a = tape.constant(t(&[3], &[0., 0., 0.])).unwrap();
        let s = tape.softmax(a, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = tape.constant(t(&[2], &[1000., 0.])).unwrap();
        let s = tape.softmax(b, 0).unwrap();
        let v = tape.value(s);
        assert!((v.data()[0] - 1.0).abs() < 1e-12);
        assert!(v.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_middle_axis_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let a = tape.constant(Tensor::randn(&[2, 5, 3], 3.0, &mut rng)).unwrap();
        let s = tape.value(tape.softmax(a, 1).unwrap());
        for o in 0..2 {
            for i in 0..3 {
                let tot: f64 = (0..5).map(|j| s.get(&[o, j, i])).sum();
                assert!((tot - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1], &[1e300])).unwrap();
        let err = tape.scale(a, 1e300).unwrap_err();
        assert!(err.to_string().contains("scale"));
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::eye(2), false).unwrap();
        let x = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]), true).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn bmm_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let report = grad_check(
            "bmm_broadcast",
            &[a, b],
            |tape, v| tape.bmm(v[0], v[1], true, false),
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn bmm_transposed_rhs_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Tensor::randn(&[2, 3, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 4, 5], 1.0, &mut rng);
        let report = grad_check("bmm_tb", &[a, b], |tape, v| tape.bmm(v[0], v[1], false, true), 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
    }
}
