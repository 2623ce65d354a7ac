//! Patch-token transformer encoder with temporal adapters and frequency-branch
//! injection, followed by a four-step multi-scale mask decoder.

pub mod checkpoint;
pub mod config;
pub mod ffm;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AttentionOrder, FactConfig, FfmTransform, ModelConfig, TemporalAdapter};
pub use params::{Bound, Param, ParamGroup, ParamStore};

use crate::attention::{AttnVars, KernelKind, TemporalKernel};
use crate::error::{Error, Result};
use crate::fact::Projection;
use crate::tensor::{Conv2dSpec, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Encoder outputs after each of the four stages, each `[B, T, H/p, W/p, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeatures {
    pub stages: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// FacT layer index of a block's temporal (`0`) or spatial (`1`) sublayer.
pub fn fact_layer(block: usize, spatial: bool) -> usize {
    2 * block + usize::from(spatial)
}

fn sigma_name(layer: usize, proj: Projection) -> String {
    format!("fact.sigma.{layer}.{}", proj.as_str())
}

fn adapter_has_query(a: TemporalAdapter) -> bool {
    a != TemporalAdapter::TemporalConv
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `seed`. Temporal
    /// output projections and FacT cores start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let d = c.embed_dim;
        let hid = c.mlp_ratio * d;
        let pin = c.in_channels * c.patch_size * c.patch_size;
        let sd = 1.0 / (d as f64).sqrt();
        let mut p = ParamStore::new();
        use ParamGroup::*;

        p.insert("patch.w", Tensor::randn(&[d, pin], 1.0 / (pin as f64).sqrt(), &mut rng), Backbone)?;
        p.insert("patch.b", Tensor::zeros(&[d]), Backbone)?;
        p.insert("pos", Tensor::randn(&[c.tokens(), d], 0.02, &mut rng), Backbone)?;
        for b in 0..c.depth {
            let ln = |p: &mut ParamStore, name: &str| -> Result<()> {
                p.insert(format!("block.{b}.{name}.g"), Tensor::full(&[d], 1.0), Backbone)?;
                p.insert(format!("block.{b}.{name}.b"), Tensor::zeros(&[d]), Backbone)?;
                Ok(())
            };
            if c.has_temporal() {
                ln(&mut p, "ln_t")?;
                let names: &[&str] = if adapter_has_query(c.temporal_adapter) {
                    &["wq", "wk", "wv"]
                } else {
                    &["wv"]
                };
                for n in names {
                    p.insert(format!("block.{b}.temporal.{n}"), Tensor::randn(&[d, d], sd, &mut rng), Backbone)?;
                }
                p.insert(format!("block.{b}.temporal.wo"), Tensor::zeros(&[d, d]), Backbone)?;
            }
            ln(&mut p, "ln_s")?;
            for n in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("block.{b}.spatial.{n}"), Tensor::randn(&[d, d], sd, &mut rng), Backbone)?;
            }
            ln(&mut p, "ln_m")?;
            p.insert(format!("block.{b}.mlp.w1"), Tensor::randn(&[hid, d], sd, &mut rng), Backbone)?;
            p.insert(format!("block.{b}.mlp.b1"), Tensor::zeros(&[hid]), Backbone)?;
            p.insert(format!("block.{b}.mlp.w2"), Tensor::randn(&[d, hid], 1.0 / (hid as f64).sqrt(), &mut rng), Backbone)?;
            p.insert(format!("block.{b}.mlp.b2"), Tensor::zeros(&[d]), Backbone)?;
        }

        if c.fact.enabled {
            let r = c.fact.rank;
            p.insert("fact.u", Tensor::randn(&[d, r], sd, &mut rng), Fact)?;
            p.insert("fact.v", Tensor::randn(&[d, r], sd, &mut rng), Fact)?;
            if !c.fact.shared {
                p.insert("fact.u_value", Tensor::randn(&[d, r], sd, &mut rng), Fact)?;
                p.insert("fact.v_value", Tensor::randn(&[d, r], sd, &mut rng), Fact)?;
            }
            for (layer, proj) in Self::fact_sites(c) {
                p.insert(sigma_name(layer, proj), Tensor::zeros(&[r, r]), Fact)?;
            }
        }

        if c.ffm_enabled {
            let cf = c.ffm_width;
            for s in 0..4 {
                let cin = if s == 0 { 4 * c.in_channels } else { cf };
                let std = (2.0 / (9 * cin) as f64).sqrt();
                p.insert(format!("ffm.conv.{s}"), Tensor::randn(&[cf, 3, 3, cin], std, &mut rng), Ffm)?;
                p.insert(format!("ffm.proj.{s}"), Tensor::randn(&[d, cf], 1.0 / (cf as f64).sqrt(), &mut rng), Ffm)?;
            }
            for n in ["wq", "wk", "wv"] {
                p.insert(format!("fusion.{n}"), Tensor::randn(&[d, d], sd, &mut rng), Fusion)?;
            }
        }

        let widths = c.decoder_widths();
        let mut cin = d;
        for (k, &w) in widths.iter().enumerate() {
            if k > 0 && c.multiscale_fusion {
                p.insert(format!("dec.skip.{k}"), Tensor::randn(&[cin, d], sd, &mut rng), Decoder)?;
            }
            let std = (2.0 / (9 * cin) as f64).sqrt();
            p.insert(format!("dec.conv.{k}"), Tensor::randn(&[w, 3, 3, cin], std, &mut rng), Decoder)?;
            cin = w;
        }
        p.insert("dec.head.w", Tensor::randn(&[c.num_classes, cin], 1.0 / (cin as f64).sqrt(), &mut rng), Decoder)?;
        p.insert("dec.head.b", Tensor::zeros(&[c.num_classes]), Decoder)?;

        Ok(Self { config, params: p })
    }

    /// Every `(layer, projection)` pair that carries a FacT core.
    pub fn fact_sites(c: &ModelConfig) -> Vec<(usize, Projection)> {
        let mut out = Vec::new();
        for b in 0..c.depth {
            if c.has_temporal() {
                if adapter_has_query(c.temporal_adapter) {
                    out.push((fact_layer(b, false), Projection::Query));
                }
                out.push((fact_layer(b, false), Projection::Value));
            }
            out.push((fact_layer(b, true), Projection::Query));
            out.push((fact_layer(b, true), Projection::Value));
        }
        out
    }

    fn check_video(&self, video: &Tensor) -> Result<(usize, usize)> {
        let c = &self.config;
        let &[b, ch, t, h, w] = video.shape() else {
            return Err(Error::InvalidShape {
                op: "forward",
                detail: format!("expected [B, C, T, H, W], got {:?}", video.shape()),
            });
        };
        if ch != c.in_channels || h != c.height || w != c.width || b == 0 || t == 0 {
            return Err(Error::InvalidShape {
                op: "forward",
                detail: format!(
                    "video {:?} does not match config [B, {}, T, {}, {}]",
                    video.shape(),
                    c.in_channels,
                    c.height,
                    c.width
                ),
            });
        }
        Ok((b, t))
    }

    fn check_normalized(video: &Tensor) -> Result<()> {
        if let Some(&bad) = video.data().iter().find(|&&x| !(-1e-6..=1.0 + 1e-6).contains(&x)) {
            return Err(Error::Unnormalized(bad));
        }
        Ok(())
    }

    /// `[B, C, T, H, W]` → non-overlapping patches `[B, T, N, C·p·p]`, feature order `(c, dy, dx)`.
    fn patches(&self, video: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check_video(video)?;
        let c = &self.config;
        let (p, ch, h, w) = (c.patch_size, c.in_channels, c.height, c.width);
        let (gh, gw) = c.grid();
        let feat = ch * p * p;
        let mut out = vec![0.0; b * t * gh * gw * feat];
        let vd = video.data();
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..ch {
                    let plane = ((bi * ch + ci) * t + ti) * h * w;
                    for y in 0..h {
                        let (gy, dy) = (y / p, y % p);
                        for x in 0..w {
                            let (gx, dx) = (x / p, x % p);
                            let tok = ((bi * t + ti) * gh + gy) * gw + gx;
                            out[tok * feat + (ci * p + dy) * p + dx] = vd[plane + y * w + x];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![b, t, gh * gw, feat], out)
    }

    /// Patch projection plus positional table: `[B, T, N, d]`.
    pub fn patch_embed_var(&self, tape: &Tape, p: &Bound, video: &Tensor) -> Result<Var> {
        let x = tape.constant(self.patches(video)?)?;
        let x = tape.linear(x, p.get("patch.w")?)?;
        let x = tape.add_bcast(x, p.get("patch.b")?)?;
        tape.add_bcast(x, p.get("pos")?)
    }

    fn layer_norm(&self, tape: &Tape, p: &Bound, x: Var, name: &str) -> Result<Var> {
        tape.layer_norm(x, p.get(&format!("{name}.g"))?, p.get(&format!("{name}.b"))?, LN_EPS)
    }

    fn projection(&self, tape: &Tape, p: &Bound, prefix: &str, n: &str, site: Option<(usize, Projection)>) -> Result<Var> {
        let w0 = p.get(&format!("{prefix}.{n}"))?;
        let Some((layer, proj)) = site.filter(|_| self.config.fact.enabled) else {
            return Ok(w0);
        };
        let (u, v) = match (proj, self.config.fact.shared) {
            (Projection::Value, false) => (p.get("fact.u_value")?, p.get("fact.v_value")?),
            _ => (p.get("fact.u")?, p.get("fact.v")?),
        };
        tape.fact_apply(w0, u, p.get(&sigma_name(layer, proj))?, v)
    }

    fn attn_vars(&self, tape: &Tape, p: &Bound, prefix: &str, layer: usize) -> Result<AttnVars> {
        Ok(AttnVars {
            wq: self.projection(tape, p, prefix, "wq", Some((layer, Projection::Query)))?,
            wk: p.get(&format!("{prefix}.wk"))?,
            wv: self.projection(tape, p, prefix, "wv", Some((layer, Projection::Value)))?,
            w_out: Some(p.get(&format!("{prefix}.wo"))?),
            heads: self.config.heads,
        })
    }

    fn temporal(&self, tape: &Tape, p: &Bound, block: usize, x: Var, phi: Var) -> Result<Var> {
        let prefix = format!("block.{block}.temporal");
        let layer = fact_layer(block, false);
        let wo = p.get(&format!("{prefix}.wo"))?;
        let o = match self.config.temporal_adapter {
            TemporalAdapter::FusionAttention | TemporalAdapter::CrossFrame => {
                self.attn_vars(tape, p, &prefix, layer)?.temporal_fusion_attention_with(tape, x, phi)?
            }
            TemporalAdapter::TemporalAttention => self.attn_vars(tape, p, &prefix, layer)?.temporal_attention(tape, x)?,
            TemporalAdapter::TemporalConv => {
                let s = tape.shape(x);
                let wv = self.projection(tape, p, &prefix, "wv", Some((layer, Projection::Value)))?;
                let v = tape.linear(x, wv)?;
                let v = tape.reshape(v, &[s[0], s[1], s[2] * s[3]])?;
                let v = tape.bmm(phi, v, false, false)?;
                tape.reshape(v, &s)?
            }
        };
        tape.linear(o, wo)
    }

    fn spatial(&self, tape: &Tape, p: &Bound, block: usize, x: Var) -> Result<Var> {
        let prefix = format!("block.{block}.spatial");
        let vars = self.attn_vars(tape, p, &prefix, fact_layer(block, true))?;
        let o = vars.self_attention(tape, x)?;
        tape.linear(o, vars.w_out.expect("spatial output projection"))
    }

    fn mlp(&self, tape: &Tape, p: &Bound, block: usize, x: Var) -> Result<Var> {
        let pre = format!("block.{block}.mlp");
        let h = tape.linear(x, p.get(&format!("{pre}.w1"))?)?;
        let h = tape.add_bcast(h, p.get(&format!("{pre}.b1"))?)?;
        let h = tape.gelu(h)?;
        let h = tape.linear(h, p.get(&format!("{pre}.w2"))?)?;
        tape.add_bcast(h, p.get(&format!("{pre}.b2"))?)
    }

    fn block(&self, tape: &Tape, p: &Bound, b: usize, x: Var, phi: Option<Var>) -> Result<Var> {
        let name = |s: &str| format!("block.{b}.{s}");
        let temporal_step = |x: Var| -> Result<Var> {
            let h = self.layer_norm(tape, p, x, &name("ln_t"))?;
            let h = self.temporal(tape, p, b, h, phi.expect("temporal kernel"))?;
            tape.add(x, h)
        };
        let spatial_step = |x: Var| -> Result<Var> {
            let h = self.layer_norm(tape, p, x, &name("ln_s"))?;
            let h = self.spatial(tape, p, b, h)?;
            tape.add(x, h)
        };
        let x = match self.config.attention_order {
            AttentionOrder::TemporalFirst => spatial_step(temporal_step(x)?)?,
            AttentionOrder::SpatialFirst => temporal_step(spatial_step(x)?)?,
            AttentionOrder::SpatialOnly => spatial_step(x)?,
            AttentionOrder::Parallel => {
                let ht = self.layer_norm(tape, p, x, &name("ln_t"))?;
                let ht = self.temporal(tape, p, b, ht, phi.expect("temporal kernel"))?;
                let hs = self.layer_norm(tape, p, x, &name("ln_s"))?;
                let hs = self.spatial(tape, p, b, hs)?;
                let x = tape.add(x, ht)?;
                tape.add(x, hs)?
            }
        };
        let h = self.layer_norm(tape, p, x, &name("ln_m"))?;
        let h = self.mlp(tape, p, b, h)?;
        tape.add(x, h)
    }

    /// Frame-mixing matrix of the temporal sublayer: `[T, T]` or, for the
    /// intensity-dependent kernel, `[B, T, T]`.
    pub fn temporal_mixing(&self, video: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check_video(video)?;
        let c = &self.config;
        match c.temporal_adapter {
            TemporalAdapter::CrossFrame => return Ok(TemporalKernel::first_frame(t)?.weights),
            TemporalAdapter::TemporalConv => {
                let mut w = Tensor::zeros(&[t, t]);
                for i in 0..t {
                    let taps: Vec<(usize, f64)> = [(i.wrapping_sub(1), 0.25), (i, 0.5), (i + 1, 0.25)]
                        .into_iter()
                        .filter(|&(j, _)| j < t)
                        .collect();
                    let z: f64 = taps.iter().map(|&(_, v)| v).sum();
                    for (j, v) in taps {
                        w.set(&[i, j], v / z);
                    }
                }
                return Ok(w);
            }
            _ => {}
        }
        if c.kernel.kind != KernelKind::Bilateral {
            return Ok(c.kernel.build(t, None)?.weights);
        }
        let (ch, hw) = (c.in_channels, c.height * c.width);
        let mut out = Vec::with_capacity(b * t * t);
        for bi in 0..b {
            let means: Vec<f64> = (0..t)
                .map(|ti| {
                    let s: f64 = (0..ch)
                        .map(|ci| {
                            let off = ((bi * ch + ci) * t + ti) * hw;
                            video.data()[off..off + hw].iter().sum::<f64>()
                        })
                        .sum();
                    s / (ch * hw) as f64
                })
                .collect();
            out.extend_from_slice(c.kernel.build(t, Some(&means))?.weights.data());
        }
        Tensor::new(vec![b, t, t], out)
    }

    /// Channels-last frequency-branch input for every frame: `[B·T, H/2, W/2, 4C]`.
    pub fn frequency_input(&self, video: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check_video(video)?;
        let c = &self.config;
        let frames = video
            .permute(&[0, 2, 1, 3, 4])?
            .into_reshape(&[b * t, c.in_channels, c.height, c.width])?;
        ffm::frequency_input(&frames, c.ffm_transform)
    }

    /// Runs the encoder on the tape and returns the four stage outputs `[B, T, N, d]`.
    pub fn encode(&self, tape: &Tape, p: &Bound, video: &Tensor) -> Result<Vec<Var>> {
        let (b, t) = self.check_video(video)?;
        let c = &self.config;
        let (n, d) = (c.tokens(), c.embed_dim);
        let mut x = self.patch_embed_var(tape, p, video)?;
        let phi = if c.has_temporal() {
            Some(tape.constant(self.temporal_mixing(video)?)?)
        } else {
            None
        };
        let ffm = if c.ffm_enabled {
            let input = tape.constant(self.frequency_input(video)?)?;
            Some(ffm::ffm_branch(tape, p, c, input)?)
        } else {
            None
        };
        let fusion = ffm
            .as_ref()
            .map(|_| -> Result<AttnVars> {
                Ok(AttnVars {
                    wq: p.get("fusion.wq")?,
                    wk: p.get("fusion.wk")?,
                    wv: p.get("fusion.wv")?,
                    w_out: None,
                    heads: c.heads,
                })
            })
            .transpose()?;
        let mut stages = Vec::with_capacity(4);
        for blk in 0..c.depth {
            x = self.block(tape, p, blk, x, phi)?;
            if (blk + 1) % c.stage_len() == 0 {
                let s = stages.len();
                if let (Some(f), Some(w)) = (&ffm, &fusion) {
                    let xv = tape.reshape(x, &[b * t, n, d])?;
                    let fused = w.cross_branch_attention(tape, xv, f[s])?;
                    x = tape.reshape(fused, &[b, t, n, d])?;
                }
                stages.push(x);
            }
        }
        Ok(stages)
    }

    /// Decoder over four stage outputs (`[B, T, N, d]` or `[B, T, h, w, d]`) → logits `[B, K, T, H, W]`.
    pub fn decode(&self, tape: &Tape, p: &Bound, stages: &[Var]) -> Result<Var> {
        let c = &self.config;
        if stages.len() != 4 {
            return Err(Error::invalid(format!("decoder needs 4 stages, got {}", stages.len())));
        }
        let s0 = tape.shape(stages[3]);
        let (b, t) = (s0[0], s0[1]);
        let (gh, gw) = c.grid();
        let d = c.embed_dim;
        let grid = |v: Var| -> Result<Var> {
            let s = tape.shape(v);
            if s.iter().product::<usize>() != b * t * gh * gw * d {
                return Err(Error::InvalidShape {
                    op: "decode",
                    detail: format!("stage shape {:?} does not match [{b}, {t}, {gh}, {gw}, {d}]", s),
                });
            }
            tape.reshape(v, &[b * t, gh, gw, d])
        };
        let factors = c.upsample_factors()?;
        let mut h = grid(stages[3])?;
        let mut scale = 1;
        for k in 0..4 {
            if k > 0 && c.multiscale_fusion {
                let skip = tape.linear(grid(stages[3 - k])?, p.get(&format!("dec.skip.{k}"))?)?;
                let skip = tape.upsample_bilinear(skip, scale)?;
                h = tape.add(h, skip)?;
            }
            h = tape.conv2d(h, p.get(&format!("dec.conv.{k}"))?, Conv2dSpec::same())?;
            h = tape.gelu(h)?;
            h = tape.upsample_bilinear(h, factors[k])?;
            scale *= factors[k];
        }
        let logits = tape.linear(h, p.get("dec.head.w")?)?;
        let logits = tape.add_bcast(logits, p.get("dec.head.b")?)?;
        let logits = tape.reshape(logits, &[b, t, c.height, c.width, c.num_classes])?;
        tape.permute(logits, &[0, 4, 1, 2, 3])
    }

    /// Full pipeline on the tape. The video must lie in `[0, 1]`.
    pub fn logits_var(&self, tape: &Tape, p: &Bound, video: &Tensor) -> Result<Var> {
        Self::check_normalized(video)?;
        let stages = self.encode(tape, p, video)?;
        self.decode(tape, p, &stages)
    }

    /// Segmentation logits `[B, K, T, H, W]` for a `[B, C, T, H, W]` video in `[0, 1]`.
    pub fn forward(&self, video: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape)?;
        let out = self.logits_var(&tape, &p, video)?;
        Ok((*tape.value(out)).clone())
    }

    /// Per-pixel argmax class ids, `[B, T, H, W]` flattened.
    pub fn predict(&self, video: &Tensor) -> Result<Vec<u8>> {
        let logits = self.forward(video)?;
        Ok(argmax_classes(&logits))
    }

    pub fn patch_embed(&self, video: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape)?;
        let v = self.patch_embed_var(&tape, &p, video)?;
        Ok((*tape.value(v)).clone())
    }

    /// Frequency-branch stage features of a single `[C, H, W]` frame, each `[h_s, w_s, d]`.
    pub fn ffm_features(&self, frame: &Tensor) -> Result<Vec<Tensor>> {
        if !self.config.ffm_enabled {
            return Err(Error::invalid("frequency branch is disabled"));
        }
        let &[ch, h, w] = frame.shape() else {
            return Err(Error::InvalidShape {
                op: "ffm_features",
                detail: format!("expected [C, H, W], got {:?}", frame.shape()),
            });
        };
        let input = ffm::frequency_input(&frame.reshape(&[1, ch, h, w])?, self.config.ffm_transform)?;
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape)?;
        let iv = tape.constant(input)?;
        let d = self.config.embed_dim;
        ffm::ffm_branch(&tape, &p, &self.config, iv)?
            .into_iter()
            .enumerate()
            .map(|(s, v)| {
                let side = 1 << (s + 2);
                tape.value(v).reshape(&[h / side, w / side, d])
            })
            .collect()
    }

    pub fn encoder_forward(&self, video: &Tensor) -> Result<StageFeatures> {
        Self::check_normalized(video)?;
        let (b, t) = self.check_video(video)?;
        let (gh, gw) = self.config.grid();
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape)?;
        let stages = self
            .encode(&tape, &p, video)?
            .into_iter()
            .map(|v| tape.value(v).reshape(&[b, t, gh, gw, self.config.embed_dim]))
            .collect::<Result<Vec<_>>>()?;
        Ok(StageFeatures { stages })
    }

    pub fn decoder_forward(&self, stages: &StageFeatures) -> Result<Tensor> {
        if stages.stages.len() != 4 {
            return Err(Error::invalid(format!("decoder needs 4 stages, got {}", stages.stages.len())));
        }
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape)?;
        let vars = stages
            .stages
            .iter()
            .map(|s| tape.constant(s.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = self.decode(&tape, &p, &vars)?;
        Ok((*tape.value(out)).clone())
    }
}

/// Argmax over the class axis of `[B, K, T, H, W]` logits → `[B, T, H, W]` ids.
pub fn argmax_classes(logits: &Tensor) -> Vec<u8> {
    let s = logits.shape();
    let (b, k, inner) = (s[0], s[1], s[2..].iter().product::<usize>());
    let d = logits.data();
    let mut out = vec![0u8; b * inner];
    for bi in 0..b {
        for i in 0..inner {
            let mut best = 0;
            for c in 1..k {
                if d[(bi * k + c) * inner + i] > d[(bi * k + best) * inner + i] {
                    best = c;
                }
            }
            out[bi * inner + i] = best as u8;
        }
    }
    out
}
