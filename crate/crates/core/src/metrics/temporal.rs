//! Temporal consistency `L`: mean absolute second difference of the
//! max-normalized area curve after resampling to a fixed time grid.

use crate::error::{Error, Result};

/// Number of points on the normalized time axis.
pub const RESAMPLE_POINTS: usize = 32;

/// Per-frame pixel counts of `class` in a `[T, H, W]` label volume.
pub fn area_curve(labels: &[u8], frames: usize, class: u8) -> Result<Vec<f64>> {
    if frames == 0 || !labels.len().is_multiple_of(frames) {
        return Err(Error::invalid(format!("{} labels do not split into {frames} frames", labels.len())));
    }
    let hw = labels.len() / frames;
    Ok(labels
        .chunks(hw)
        .map(|f| f.iter().filter(|&&c| c == class).count() as f64)
        .collect())
}

/// Linear interpolation of `values` (at `t / (T-1)`) onto `n` equispaced points of `[0, 1]`.
pub fn resample(values: &[f64], n: usize) -> Vec<f64> {
    let last = (values.len() - 1) as f64;
    (0..n)
        .map(|j| {
            let pos = j as f64 / (n - 1) as f64 * last;
            let i = (pos.floor() as usize).min(values.len() - 2);
            let f = pos - i as f64;
            values[i] * (1.0 - f) + values[i + 1] * f
        })
        .collect()
}

/// `L` of an area curve with at least three frames and a non-zero maximum.
pub fn temporal_consistency_of_areas(areas: &[f64]) -> Result<f64> {
    if areas.len() < 3 {
        return Err(Error::invalid(format!("temporal consistency needs at least 3 frames, got {}", areas.len())));
    }
    let max = areas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid("structure absent in every frame"));
    }
    let norm: Vec<f64> = areas.iter().map(|a| a / max).collect();
    let s = resample(&norm, RESAMPLE_POINTS);
    let total: f64 = s.windows(3).map(|w| (w[2] + w[0] - 2.0 * w[1]).abs()).sum();
    Ok(total / (RESAMPLE_POINTS - 2) as f64)
}

/// `L` of one class in a `[T, H, W]` label volume.
pub fn temporal_consistency(labels: &[u8], frames: usize, class: u8) -> Result<f64> {
    temporal_consistency_of_areas(&area_curve(labels, frames, class)?)
}
