//! Cross-entropy plus soft-Dice over labeled frames only.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Class-id masks for a subset of a clip's frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLabels {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Frame index → row-major `H × W` class ids.
    pub masks: BTreeMap<usize, Vec<u8>>,
}

impl SparseLabels {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            masks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame: usize, mask: Vec<u8>) -> Result<()> {
        if frame >= self.frames {
            return Err(Error::invalid(format!("label frame {frame} outside clip of {} frames", self.frames)));
        }
        if mask.len() != self.height * self.width {
            return Err(Error::invalid(format!(
                "mask has {} pixels, expected {}",
                mask.len(),
                self.height * self.width
            )));
        }
        self.masks.insert(frame, mask);
        Ok(())
    }

    pub fn labeled_frames(&self) -> Vec<usize> {
        self.masks.keys().copied().collect()
    }
}

/// Dense loss target for a batch: labels `[B, T, H, W]` and a `[B, T]` mask of labeled frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SegLossTarget {
    pub labels: Vec<u8>,
    pub labeled: Vec<bool>,
    pub smooth: f64,
}

impl SegLossTarget {
    pub fn from_sparse(batch: &[SparseLabels]) -> Result<Self> {
        let first = batch.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (t, hw) = (first.frames, first.height * first.width);
        let mut labels = vec![0u8; batch.len() * t * hw];
        let mut labeled = vec![false; batch.len() * t];
        for (b, s) in batch.iter().enumerate() {
            if (s.frames, s.height, s.width) != (first.frames, first.height, first.width) {
                return Err(Error::invalid("labels in a batch must share clip geometry"));
            }
            for (&f, m) in &s.masks {
                labeled[b * t + f] = true;
                labels[(b * t + f) * hw..(b * t + f + 1) * hw].copy_from_slice(m);
            }
        }
        Ok(Self {
            labels,
            labeled,
            smooth: 1.0,
        })
    }
}

struct FrameStats {
    inter: Vec<f64>,
    psum: Vec<f64>,
    gsum: Vec<f64>,
}

impl Tape {
    /// Mean over labeled frames of `CE + (1 − mean_k Dice_k)` for logits `[B, K, T, H, W]`.
    /// Unlabeled frames receive exactly zero gradient.
    pub fn seg_loss(&self, logits: Var, target: &SegLossTarget) -> Result<Var> {
        let lv = self.value(logits);
        let &[b, k, t, h, w] = lv.shape() else {
            return Err(Error::InvalidShape {
                op: "seg_loss",
                detail: format!("expected [B, K, T, H, W], got {:?}", lv.shape()),
            });
        };
        let hw = h * w;
        if target.labels.len() != b * t * hw || target.labeled.len() != b * t {
            return Err(Error::InvalidShape {
                op: "seg_loss",
                detail: format!("target does not match logits {:?}", lv.shape()),
            });
        }
        if let Some(&bad) = target.labels.iter().find(|&&c| c as usize >= k) {
            return Err(Error::invalid(format!("class id {bad} outside {k} classes")));
        }
        let n_frames = target.labeled.iter().filter(|&&l| l).count();
        if n_frames == 0 {
            return Err(Error::NoSupervision);
        }
        let s = target.smooth;
        let ld = lv.data();
        let idx = move |bi: usize, c: usize, ti: usize, px: usize| ((bi * k + c) * t + ti) * hw + px;
        let mut probs = vec![0.0; ld.len()];
        let mut stats: BTreeMap<(usize, usize), FrameStats> = BTreeMap::new();
        let mut total = 0.0;
        let mut z = vec![0.0; k];
        for bi in 0..b {
            for ti in 0..t {
                if !target.labeled[bi * t + ti] {
                    continue;
                }
                let mut ce = 0.0;
                let mut st = FrameStats {
                    inter: vec![0.0; k],
                    psum: vec![0.0; k],
                    gsum: vec![0.0; k],
                };
                for px in 0..hw {
                    let y = target.labels[(bi * t + ti) * hw + px] as usize;
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc = ld[idx(bi, c, ti, px)];
                    }
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    ce += lse - z[y];
                    for c in 0..k {
                        let p = (z[c] - lse).exp();
                        probs[idx(bi, c, ti, px)] = p;
                        st.psum[c] += p;
                    }
                    st.inter[y] += probs[idx(bi, y, ti, px)];
                    st.gsum[y] += 1.0;
                }
                let dice: f64 = (0..k)
                    .map(|c| (2.0 * st.inter[c] + s) / (st.psum[c] + st.gsum[c] + s))
                    .sum::<f64>()
                    / k as f64;
                total += ce / hw as f64 + 1.0 - dice;
                stats.insert((bi, ti), st);
            }
        }
        let loss = Tensor::scalar(total / n_frames as f64);
        let labels = target.labels.clone();
        let shape = lv.shape().to_vec();
        self.push(
            "seg_loss",
            loss,
            &[logits],
            Box::new(move |g, _| {
                let scale = g.item() / n_frames as f64;
                let mut dz = vec![0.0; probs.len()];
                let mut dp = vec![0.0; k];
                for (&(bi, ti), st) in &stats {
                    let coef: Vec<(f64, f64)> = (0..k)
                        .map(|c| {
                            let den = st.psum[c] + st.gsum[c] + s;
                            let num = 2.0 * st.inter[c] + s;
                            // d(1 − mean Dice)/dp = −(1/K)(2g·den − num)/den²
                            (-2.0 / (k as f64 * den), num / (k as f64 * den * den))
                        })
                        .collect();
                    for px in 0..hw {
                        let y = labels[(bi * t + ti) * hw + px] as usize;
                        let mut dot = 0.0;
                        for c in 0..k {
                            let gc = if c == y { 1.0 } else { 0.0 };
                            dp[c] = coef[c].0 * gc + coef[c].1;
                            dot += probs[idx(bi, c, ti, px)] * dp[c];
                        }
                        for c in 0..k {
                            let i = idx(bi, c, ti, px);
                            let p = probs[i];
                            let gc = if c == y { 1.0 } else { 0.0 };
                            dz[i] = scale * ((p - gc) / hw as f64 + p * (dp[c] - dot));
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dz).expect("shape"))]
            }),
        )
    }
}

/// Value of the masked loss.
pub fn masked_loss(logits: &Tensor, target: &SegLossTarget) -> Result<f64> {
    let tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let out = tape.seg_loss(l, target)?;
    let v = tape.value(out).item();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_target(b: usize, t: usize, hw: usize, k: u8, labeled: Vec<bool>, seed: u64) -> SegLossTarget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SegLossTarget {
            labels: (0..b * t * hw).map(|_| rng.random_range(0..k)).collect(),
            labeled,
            smooth: 1.0,
        }
    }

    /// Per-frame loss computed from the definition, frame by frame.
    fn frame_loss(logits: &Tensor, labels: &[u8], bi: usize, ti: usize) -> f64 {
        let s = logits.shape();
        let (k, t, h, w) = (s[1], s[2], s[3], s[4]);
        let hw = h * w;
        let mut ce = 0.0;
        let mut inter = vec![0.0; k];
        let mut ps = vec![0.0; k];
        let mut gs = vec![0.0; k];
        for y in 0..h {
            for x in 0..w {
                let z: Vec<f64> = (0..k).map(|c| logits.get(&[bi, c, ti, y, x])).collect();
                let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                let tot: f64 = e.iter().sum();
                let lab = labels[(bi * t + ti) * hw + y * w + x] as usize;
                ce -= (e[lab] / tot).ln();
                for c in 0..k {
                    let p = e[c] / tot;
                    ps[c] += p;
                    if c == lab {
                        inter[c] += p;
                        gs[c] += 1.0;
                    }
                }
            }
        }
        let dice: f64 = (0..k).map(|c| (2.0 * inter[c] + 1.0) / (ps[c] + gs[c] + 1.0)).sum::<f64>() / k as f64;
        ce / hw as f64 + 1.0 - dice
    }

    #[test]
    fn fully_labeled_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Tensor::randn(&[2, 3, 2, 3, 4], 1.0, &mut rng);
        let tgt = random_target(2, 2, 12, 3, vec![true; 4], 2);
        let want = (0..2)
            .flat_map(|b| (0..2).map(move |t| (b, t)))
            .map(|(b, t)| frame_loss(&logits, &tgt.labels, b, t))
            .sum::<f64>()
            / 4.0;
        assert!((masked_loss(&logits, &tgt).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_logits_give_small_loss() {
        let tgt = random_target(1, 2, 16, 3, vec![true, true], 3);
        let mut logits = Tensor::zeros(&[1, 3, 2, 4, 4]);
        for ti in 0..2 {
            for px in 0..16 {
                let y = tgt.labels[ti * 16 + px] as usize;
                logits.set(&[0, y, ti, px / 4, px % 4], 20.0);
            }
        }
        assert!(masked_loss(&logits, &tgt).unwrap() < 1e-3);
    }

    #[test]
    fn unlabeled_frames_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Tensor::randn(&[1, 3, 3, 2, 2], 1.0, &mut rng);
        let tgt = random_target(1, 3, 4, 3, vec![true, false, true], 5);
        let tape = Tape::new();
        let l = tape.leaf(logits, true).unwrap();
        let loss = tape.seg_loss(l, &tgt).unwrap();
        let g = tape.backward(loss).unwrap();
        let g = g.get(l).unwrap();
        for c in 0..3 {
            for px in 0..4 {
                assert_eq!(g.get(&[0, c, 1, px / 2, px % 2]), 0.0);
                assert_ne!(g.get(&[0, c, 0, px / 2, px % 2]), 0.0);
            }
        }
    }

    #[test]
    fn unlabeled_logits_do_not_change_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = Tensor::randn(&[1, 2, 2, 2, 2], 1.0, &mut rng);
        let tgt = random_target(1, 2, 4, 2, vec![false, true], 7);
        let mut other = logits.clone();
        for c in 0..2 {
            other.set(&[0, c, 0, 1, 1], 5.0);
        }
        assert_eq!(masked_loss(&logits, &tgt).unwrap(), masked_loss(&other, &tgt).unwrap());
    }

    #[test]
    fn no_labels_is_an_error() {
        let tgt = random_target(1, 2, 4, 2, vec![false, false], 8);
        let err = masked_loss(&Tensor::zeros(&[1, 2, 2, 2, 2]), &tgt).unwrap_err();
        assert_eq!(err.to_string(), "no supervision in clip");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Tensor::randn(&[2, 3, 2, 2, 3], 1.0, &mut rng);
        let tgt = random_target(2, 2, 6, 3, vec![true, false, true, true], 10);
        let rep = grad_check("seg_loss", &[logits], |tape, v| tape.seg_loss(v[0], &tgt), 1e-5).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn sparse_labels_validation() {
        let mut s = SparseLabels::new(4, 2, 2);
        assert!(s.insert(4, vec![0; 4]).is_err());
        assert!(s.insert(1, vec![0; 3]).is_err());
        s.insert(3, vec![1; 4]).unwrap();
        s.insert(0, vec![0; 4]).unwrap();
        assert_eq!(s.labeled_frames(), vec![0, 3]);
        let t = SegLossTarget::from_sparse(&[s]).unwrap();
        assert_eq!(t.labeled, vec![true, false, false, true]);
    }
}
