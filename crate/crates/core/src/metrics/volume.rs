//! Method-of-disks volumes and ejection fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of disks.
pub const DISKS: usize = 20;
/// Ejection fractions below this are flagged as pathological risk.
pub const EF_RISK_THRESHOLD: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePair {
    pub edv: f64,
    pub esv: f64,
}

/// `(π/4) Σ aᵢ bᵢ (L/n)` in mm³ from diameters and long axis in mm.
pub fn simpson_biplane_mm3(a: &[f64], b: &[f64], long_axis_mm: f64, n: usize) -> Result<f64> {
    if n == 0 || a.len() != n || b.len() != n {
        return Err(Error::invalid(format!(
            "diameter lists of length {} and {} for {n} disks",
            a.len(),
            b.len()
        )));
    }
    let h = long_axis_mm / n as f64;
    Ok(std::f64::consts::FRAC_PI_4 * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * h)
}

/// Method-of-disks volume in millilitres.
pub fn simpson_biplane(a: &[f64], b: &[f64], long_axis_mm: f64, n: usize) -> Result<f64> {
    Ok(simpson_biplane_mm3(a, b, long_axis_mm, n)? / 1000.0)
}

/// Disk diameters (mm) and long-axis length (mm) of a binary mask.
///
/// The long axis is the principal axis of the pixel centres. Each pixel spreads
/// its unit area uniformly over a unit interval along that axis, so slab areas
/// divided by slab thickness give area-preserving mean widths.
pub fn mask_diameters(mask: &[bool], h: usize, w: usize, spacing: f64, n: usize) -> Result<(Vec<f64>, f64)> {
    if mask.len() != h * w || n == 0 {
        return Err(Error::invalid("mask size does not match geometry"));
    }
    let pts: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| mask[i])
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    if pts.is_empty() {
        return Ok((vec![0.0; n], 0.0));
    }
    let m = pts.len() as f64;
    let (my, mx) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / m, b + p.1 / m));
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for &(y, x) in &pts {
        syy += (y - my) * (y - my);
        sxx += (x - mx) * (x - mx);
        sxy += (y - my) * (x - mx);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(syy - sxx);
    let axis = (theta.cos(), theta.sin());
    let proj: Vec<f64> = pts.iter().map(|p| (p.0 - my) * axis.0 + (p.1 - mx) * axis.1).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let len = hi - lo;
    let dz = len / n as f64;
    let mut area = vec![0.0; n];
    for &p in &proj {
        let (a, b) = (p - 0.5 - lo, p + 0.5 - lo);
        let first = ((a / dz).floor().max(0.0) as usize).min(n - 1);
        let last = ((b / dz).floor().max(0.0) as usize).min(n - 1);
        for (k, slab) in area.iter_mut().enumerate().take(last + 1).skip(first) {
            let (s0, s1) = (k as f64 * dz, (k + 1) as f64 * dz);
            *slab += (b.min(s1) - a.max(s0)).max(0.0);
        }
    }
    let diam = area.iter().map(|a| a / dz * spacing).collect();
    Ok((diam, len * spacing))
}

/// Single-view disk volume (ml): the same diameters serve as both orthogonal views.
pub fn mask_volume(mask: &[bool], h: usize, w: usize, spacing: f64) -> Result<f64> {
    let (d, l) = mask_diameters(mask, h, w, spacing, DISKS)?;
    simpson_biplane(&d, &d, l, DISKS)
}

/// `(EDV − ESV) / EDV × 100`.
pub fn ejection_fraction(v: VolumePair) -> Result<f64> {
    if v.edv <= 0.0 || !v.edv.is_finite() || !v.esv.is_finite() {
        return Err(Error::invalid(format!("end-diastolic volume must be positive, got {}", v.edv)));
    }
    Ok((v.edv - v.esv) / v.edv * 100.0)
}

pub fn is_pathological(ef_percent: f64) -> bool {
    ef_percent < EF_RISK_THRESHOLD
}
