//! Fixed-length clip sampling starting at end-diastole.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::loss::SparseLabels;

/// Source frame indices of a clip: consecutive frames from `ed`, running past
/// `es` and wrapping cyclically when the video ends.
pub fn clip_indices(video_len: usize, ed: usize, es: usize, clip_len: usize) -> Result<Vec<usize>> {
    if video_len < 2 {
        return Err(Error::invalid(format!("video has {video_len} frames; at least 2 required")));
    }
    if clip_len < 2 {
        return Err(Error::invalid("clip length must be at least 2"));
    }
    if ed >= es || es >= video_len {
        return Err(Error::invalid(format!(
            "need ed < es < video length, got ed={ed}, es={es}, length={video_len}"
        )));
    }
    Ok((0..clip_len).map(|i| (ed + i) % video_len).collect())
}

/// Cuts a clip out of `video` (`[C, T, H, W]`) and remaps `labels` to clip-local
/// frame indices. A source frame that appears twice keeps its label at both positions.
pub fn sample_clip(
    video: &Tensor,
    labels: &SparseLabels,
    ed: usize,
    es: usize,
    clip_len: usize,
) -> Result<(Tensor, SparseLabels)> {
    let &[c, t, h, w] = video.shape() else {
        return Err(Error::InvalidShape {
            op: "sample_clip",
            detail: format!("expected [C, T, H, W], got {:?}", video.shape()),
        });
    };
    if labels.frames != t || labels.height != h || labels.width != w {
        return Err(Error::invalid("labels do not match video geometry"));
    }
    let idx = clip_indices(t, ed, es, clip_len)?;
    let hw = h * w;
    let src = video.data();
    let mut data = Vec::with_capacity(c * clip_len * hw);
    for ch in 0..c {
        for &f in &idx {
            let o = (ch * t + f) * hw;
            data.extend_from_slice(&src[o..o + hw]);
        }
    }
    let mut out = SparseLabels::new(clip_len, h, w);
    for (i, f) in idx.iter().enumerate() {
        if let Some(m) = labels.masks.get(f) {
            out.insert(i, m.clone())?;
        }
    }
    Ok((Tensor::new(vec![c, clip_len, h, w], data)?, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_cycle_clip() {
        assert_eq!(clip_indices(8, 0, 7, 8).unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn short_video_wraps() {
        assert_eq!(clip_indices(6, 0, 3, 8).unwrap(), vec![0, 1, 2, 3, 4, 5, 0, 1]);
        assert_eq!(clip_indices(6, 2, 4, 5).unwrap(), vec![2, 3, 4, 5, 0]);
    }

    #[test]
    fn precondition_errors() {
        assert!(clip_indices(8, 3, 3, 8).is_err());
        assert!(clip_indices(8, 4, 2, 8).is_err());
        assert!(clip_indices(1, 0, 0, 8).is_err());
        assert!(clip_indices(8, 0, 8, 8).is_err());
        assert!(clip_indices(8, 0, 4, 1).is_err());
    }

    #[test]
    fn labels_follow_their_frames() {
        let (t, h, w) = (6, 2, 2);
        let video = Tensor::new(vec![1, t, h, w], (0..t * h * w).map(|i| (i / 4) as f64).collect()).unwrap();
        let mut labels = SparseLabels::new(t, h, w);
        labels.insert(0, vec![1; 4]).unwrap();
        labels.insert(3, vec![2; 4]).unwrap();
        let (clip, cl) = sample_clip(&video, &labels, 0, 3, 8).unwrap();
        assert_eq!(clip.shape(), &[1, 8, 2, 2]);
        let firsts: Vec<f64> = (0..8).map(|i| clip.data()[i * 4]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 1.0]);
        assert_eq!(cl.labeled_frames(), vec![0, 3, 6]);
        assert_eq!(cl.masks[&6], vec![1; 4]);
    }
}
