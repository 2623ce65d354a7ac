//! Model inference over dataset samples and report assembly.

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{class_mask, dice, ef_from_labels, score_structure, EfRow, EvalReport, Geometry};
use crate::model::Model;
use crate::parallel::try_map_ordered;
use crate::tensor::Tensor;

/// Class ids `[T, H, W]` for a `[C, T, H, W]` video.
pub fn predict_labels(model: &Model, video: &Tensor) -> Result<Vec<u8>> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            op: "predict_labels",
            detail: format!("expected [C, T, H, W], got {s:?}"),
        });
    }
    let mut batched = vec![1];
    batched.extend_from_slice(s);
    model.predict(&video.reshape(&batched)?)
}

fn geometry(s: &Sample) -> Geometry {
    Geometry {
        frames: s.entry.frames,
        height: s.entry.height,
        width: s.entry.width,
        spacing_mm: s.entry.spacing_mm,
    }
}

/// Mean over foreground classes of the per-frame-averaged Dice.
pub fn foreground_dice(pred: &[u8], gt: &[u8], frames: usize, num_classes: usize) -> Result<f64> {
    if pred.len() != gt.len() || frames == 0 || num_classes < 2 {
        return Err(Error::invalid("prediction and ground truth must share geometry"));
    }
    let hw = pred.len() / frames;
    let mut total = 0.0;
    for c in 1..num_classes as u8 {
        for (p, g) in pred.chunks(hw).zip(gt.chunks(hw)) {
            total += dice(&class_mask(p, c), &class_mask(g, c))?;
        }
    }
    Ok(total / ((num_classes - 1) * frames) as f64)
}

/// Mean foreground Dice over samples, predicting in parallel.
pub fn mean_foreground_dice(model: &Model, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    let k = model.config.num_classes;
    let scores = try_map_ordered(samples, |_, s| {
        let pred = predict_labels(model, &s.video)?;
        foreground_dice(&pred, &s.masks, s.entry.frames, k)
    })?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-(video, structure) scores plus predicted-versus-true EF for every sample.
/// `predictions` must hold one `[T, H, W]` label volume per sample.
pub fn build_report(samples: &[&Sample], predictions: &[Vec<u8>], class_names: &[String]) -> Result<EvalReport> {
    if samples.len() != predictions.len() {
        return Err(Error::invalid("one prediction per sample required"));
    }
    let mut report = EvalReport::default();
    for (s, pred) in samples.iter().zip(predictions) {
        let g = geometry(s);
        for (i, name) in class_names.iter().enumerate() {
            report.rows.push(score_structure(&s.entry.id, name, i as u8 + 1, pred, &s.masks, g)?);
        }
        report.ef.push(EfRow {
            video_id: s.entry.id.clone(),
            ef_pred: ef_from_labels(pred, g, 1, s.entry.ed, s.entry.es).ok(),
            ef_true: s.entry.ef_percent,
        });
    }
    Ok(report)
}

pub fn evaluate(model: &Model, samples: &[&Sample], class_names: &[String]) -> Result<EvalReport> {
    let preds = try_map_ordered(samples, |_, s| predict_labels(model, &s.video))?;
    build_report(samples, &preds, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foreground_dice_averages_classes_and_frames() {
        let gt = [1, 2, 0, 0, 1, 2, 0, 0];
        assert_eq!(foreground_dice(&gt, &gt, 2, 3).unwrap(), 1.0);
        let pred = [1, 1, 0, 0, 1, 2, 0, 0];
        // class 1: frame0 2/3, frame1 1; class 2: frame0 0, frame1 1.
        let want = (2.0 / 3.0 + 1.0 + 0.0 + 1.0) / 4.0;
        assert!((foreground_dice(&pred, &gt, 2, 3).unwrap() - want).abs() < 1e-15);
    }
}
