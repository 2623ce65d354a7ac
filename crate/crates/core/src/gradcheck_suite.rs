//! Registry of every differentiable op with representative random inputs.
//!
//! Ops whose summed output is constant (softmax, layer norm) are contracted
//! with a fixed random weight tensor so the check is not vacuous.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{gaussian_kernel, AttnVars};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::tensor::{Conv2dSpec, DifferentiableOp, Tape, Tensor, Var};
use crate::train::loss::SegLossTarget;

type SampleFn = fn(&mut ChaCha8Rng) -> Result<Vec<Tensor>>;
type ForwardFn = fn(&Tape, &[Var]) -> Result<Var>;

struct FnOp {
    name: &'static str,
    sample: SampleFn,
    forward: ForwardFn,
    /// Number of leading inputs that are differentiated.
    n_diff: Option<usize>,
    tol: f64,
}

impl DifferentiableOp for FnOp {
    fn name(&self) -> &str {
        self.name
    }

    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Tensor>> {
        (self.sample)(rng)
    }

    fn forward(&self, tape: &Tape, inputs: &[Var]) -> Result<Var> {
        (self.forward)(tape, inputs)
    }

    fn differentiable_inputs(&self, n_inputs: usize) -> Vec<usize> {
        (0..self.n_diff.unwrap_or(n_inputs)).collect()
    }

    fn tolerance(&self) -> f64 {
        self.tol
    }
}

fn op(name: &'static str, sample: SampleFn, forward: ForwardFn) -> FnOp {
    FnOp {
        name,
        sample,
        forward,
        n_diff: None,
        tol: 1e-5,
    }
}

fn weighted(name: &'static str, n_diff: usize, sample: SampleFn, forward: ForwardFn) -> FnOp {
    FnOp {
        n_diff: Some(n_diff),
        ..op(name, sample, forward)
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn attn(v: &[Var], heads: usize) -> AttnVars {
    AttnVars {
        wq: v[0],
        wk: v[1],
        wv: v[2],
        w_out: None,
        heads,
    }
}

fn attn_weights(rng: &mut ChaCha8Rng, d: usize) -> Vec<Tensor> {
    (0..3).map(|_| Tensor::randn(&[d, d], 0.5, rng)).collect()
}

fn e2e_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        frames: 2,
        height: 32,
        width: 32,
        ..ModelConfig::default()
    }
}

const E2E_SIGMA: &str = "fact.sigma.1.query";

fn e2e_sample(rng: &mut ChaCha8Rng) -> Result<Vec<Tensor>> {
    let cfg = e2e_config();
    let r = cfg.fact.rank;
    let video = Tensor::uniform(&[1, 1, cfg.frames, cfg.height, cfg.width], 0.0, 1.0, rng);
    Ok(vec![Tensor::randn(&[r, r], 0.5, rng), video, Tensor::scalar(rng.random_range(0..1000) as f64)])
}

fn e2e_forward(tape: &Tape, v: &[Var]) -> Result<Var> {
    let cfg = e2e_config();
    let seed = tape.value(v[2]).item() as u64;
    let model = Model::new(cfg.clone(), seed)?;
    let mut p = model.params.bind_frozen(tape)?;
    p.replace(E2E_SIGMA, v[0])?;
    let video = tape.value(v[1]);
    let logits = model.logits_var(tape, &p, &video)?;
    let hw = cfg.height * cfg.width;
    let labels = (0..cfg.frames * hw).map(|i| ((i / 7) % cfg.num_classes) as u8).collect();
    let target = SegLossTarget {
        labels,
        labeled: vec![true, false],
        smooth: 1.0,
    };
    tape.seg_loss(logits, &target)
}

/// Every op under the gradient-check contract.
pub fn registered_ops() -> Vec<Box<dyn DifferentiableOp>> {
    let ops: Vec<FnOp> = vec![
        op("matmul", |r| Ok(vec![randn(r, &[4, 3]), randn(r, &[3, 5])]), |t, v| t.matmul(v[0], v[1])),
        op(
            "bmm",
            |r| Ok(vec![randn(r, &[2, 3, 4]), randn(r, &[2, 5, 4])]),
            |t, v| t.bmm(v[0], v[1], false, true),
        ),
        weighted(
            "softmax",
            1,
            |r| Ok(vec![randn(r, &[8]), randn(r, &[8])]),
            |t, v| {
                let s = t.softmax(v[0], 0)?;
                t.mul(s, v[1])
            },
        ),
        weighted(
            "log_softmax",
            1,
            |r| Ok(vec![randn(r, &[3, 4]), randn(r, &[3, 4])]),
            |t, v| {
                let s = t.log_softmax(v[0], 1)?;
                t.mul(s, v[1])
            },
        ),
        weighted(
            "layer_norm",
            3,
            |r| Ok(vec![randn(r, &[3, 5]), randn(r, &[5]), randn(r, &[5]), randn(r, &[3, 5])]),
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                t.mul(y, v[3])
            },
        ),
        op("gelu", |r| Ok(vec![randn(r, &[10])]), |t, v| t.gelu(v[0])),
        weighted(
            "elementwise",
            2,
            |r| Ok(vec![randn(r, &[2, 3]), randn(r, &[2, 3]), randn(r, &[3])]),
            |t, v| {
                let a = t.mul(v[0], v[1])?;
                let b = t.sub(a, v[1])?;
                let c = t.add_bcast(b, v[2])?;
                let c = t.permute(c, &[1, 0])?;
                t.scale(c, 0.7)
            },
        ),
        op(
            "conv2d",
            |r| Ok(vec![randn(r, &[1, 5, 4, 2]), randn(r, &[3, 3, 3, 2])]),
            |t, v| {
                let a = t.conv2d(v[0], v[1], Conv2dSpec::same())?;
                let b = t.conv2d(v[0], v[1], Conv2dSpec::down2())?;
                let a = t.sum(a)?;
                let b = t.sum(b)?;
                let bb = t.mul(b, b)?;
                t.add(a, bb)
            },
        ),
        weighted(
            "upsample_bilinear",
            1,
            |r| Ok(vec![randn(r, &[1, 3, 2, 2]), randn(r, &[1, 6, 4, 2])]),
            |t, v| {
                let u = t.upsample_bilinear(v[0], 2)?;
                t.mul(u, v[1])
            },
        ),
        weighted(
            "haar_dwt",
            1,
            |r| Ok(vec![randn(r, &[2, 4, 4]), randn(r, &[4, 2, 2, 2])]),
            |t, v| {
                let y = t.haar_dwt(v[0])?;
                t.mul(y, v[1])
            },
        ),
        op(
            "self_attention",
            |r| {
                let mut v = attn_weights(r, 4);
                v.push(randn(r, &[4, 4]));
                Ok(v)
            },
            |t, v| attn(v, 1).self_attention(t, v[3]),
        ),
        op(
            "temporal_fusion_attention",
            |r| {
                let mut v = attn_weights(r, 4);
                v.push(randn(r, &[3, 2, 4]));
                Ok(v)
            },
            |t, v| {
                let k = gaussian_kernel(3, 1.0, 5, true)?;
                attn(v, 1).temporal_fusion_attention(t, v[3], &k)
            },
        ),
        op(
            "temporal_attention",
            |r| {
                let mut v = attn_weights(r, 4);
                v.push(randn(r, &[1, 3, 2, 4]));
                Ok(v)
            },
            |t, v| attn(v, 1).temporal_attention(t, v[3]),
        ),
        op(
            "cross_branch_attention",
            |r| {
                let mut v = attn_weights(r, 4);
                v.push(randn(r, &[3, 4]));
                v.push(randn(r, &[5, 4]));
                Ok(v)
            },
            |t, v| attn(v, 1).cross_branch_attention(t, v[3], v[4]),
        ),
        op(
            "fact_apply",
            |r| Ok(vec![randn(r, &[6, 6]), randn(r, &[6, 2]), randn(r, &[2, 2]), randn(r, &[6, 2]), randn(r, &[3, 6])]),
            |t, v| {
                let w = t.fact_apply(v[0], v[1], v[2], v[3])?;
                let y = t.linear(v[4], w)?;
                t.mul(y, y)
            },
        ),
        weighted(
            "seg_loss",
            1,
            |r| {
                let labels: Vec<f64> = (0..2 * 2 * 6).map(|_| r.random_range(0..3) as f64).collect();
                Ok(vec![randn(r, &[2, 3, 2, 2, 3]), Tensor::new(vec![24], labels)?])
            },
            |t, v| {
                let labels = t.value(v[1]).data().iter().map(|&c| c as u8).collect();
                let target = SegLossTarget {
                    labels,
                    labeled: vec![true, false, true, true],
                    smooth: 1.0,
                };
                t.seg_loss(v[0], &target)
            },
        ),
        FnOp {
            tol: 1e-4,
            ..weighted("model_forward", 1, e2e_sample, e2e_forward)
        },
    ];
    ops.into_iter().map(|o| Box::new(o) as Box<dyn DifferentiableOp>).collect()
}

/// An op whose backward is deliberately scaled by 1.01; it must fail the check.
pub fn negative_control() -> Box<dyn DifferentiableOp> {
    Box::new(op("corrupted_backward", |r| Ok(vec![randn(r, &[6])]), |t, v| {
        let val = t.value(v[0]).map(|x| x * x);
        let x = t.value(v[0]);
        t.push(
            "corrupted_backward",
            val,
            &[v[0]],
            Box::new(move |g, _| vec![Some(g.zip_map(&x, |gi, xi| 1.01 * 2.0 * xi * gi).expect("shape"))]),
        )
    }))
}

/// Looks an op up by name, including the negative control.
pub fn find_op(name: &str) -> Option<Box<dyn DifferentiableOp>> {
    registered_ops()
        .into_iter()
        .chain(std::iter::once(negative_control()))
        .find(|o| o.name() == name)
}
