//! Synthetic beating-chamber echo phantom.
//!
//! An inner ellipse (blood pool, class 1) inside a myocardial ring (class 2),
//! optionally with an atrial blob (class 3). Semi-axes follow
//! `s(t) = 1 − (e/2)(1 − cos 2πt/T)`, so the chamber is largest at frame 0 and
//! smallest at `T/2`, and the generating spheroid has EF `1 − (1 − e)³`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::VolumePair;
use crate::parallel::try_map_ordered;
use crate::tensor::Tensor;
use crate::train::loss::SparseLabels;
use crate::train::rng::keyed_rng;

pub use crate::dataset::write_dataset;

pub const CLASS_NAMES: [&str; 3] = ["endo", "epi", "atrium"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Contraction amplitude `e` in `[0, 1)`.
    pub eject: f64,
    /// Per-video uniform jitter half-width applied to `eject`.
    pub eject_jitter: f64,
    /// Log-std of the multiplicative speckle.
    pub speckle_sigma: f64,
    pub noise_std: f64,
    pub atrium: bool,
    pub spacing_mm: f64,
    /// Maximum long-axis tilt in radians.
    pub max_tilt: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            eject: 0.4,
            eject_jitter: 0.15,
            speckle_sigma: 0.3,
            noise_std: 0.03,
            atrium: false,
            spacing_mm: 1.0,
            max_tilt: 0.25,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 4 {
            return Err(Error::invalid(format!("phantom needs at least 4 frames, got {}", self.frames)));
        }
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) || self.height < 16 || self.width < 16 {
            return Err(Error::invalid(format!(
                "phantom size {}x{} must be even and at least 16",
                self.height, self.width
            )));
        }
        let lo = self.eject - self.eject_jitter;
        let hi = self.eject + self.eject_jitter;
        if !(0.0..1.0).contains(&self.eject) || self.eject_jitter < 0.0 || lo < 0.0 || hi >= 1.0 {
            return Err(Error::invalid(format!(
                "ejection parameter {} ± {} must stay within [0, 1)",
                self.eject, self.eject_jitter
            )));
        }
        if self.speckle_sigma < 0.0 || self.noise_std < 0.0 || self.spacing_mm <= 0.0 || self.max_tilt < 0.0 {
            return Err(Error::invalid("noise levels and tilt must be non-negative, spacing positive"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        if self.atrium {
            4
        } else {
            3
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        CLASS_NAMES[..self.num_classes() - 1].iter().map(|s| s.to_string()).collect()
    }
}

/// Closed-form EF (%) of the generating spheroid.
pub fn analytic_ef(eject: f64) -> f64 {
    (1.0 - (1.0 - eject).powi(3)) * 100.0
}

pub fn scale_at(eject: f64, t: usize, frames: usize) -> f64 {
    1.0 - 0.5 * eject * (1.0 - (2.0 * PI * t as f64 / frames as f64).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomRecord {
    /// `[1, T, H, W]` in `[0, 1]`.
    pub video: Tensor,
    /// Dense ground-truth class ids `[T, H, W]`.
    pub masks: Vec<u8>,
    /// The sparse training annotation: ED and ES only.
    pub labels: SparseLabels,
    pub ed_idx: usize,
    pub es_idx: usize,
    /// Analytic area per frame (pixels), one entry per foreground class.
    pub true_area: Vec<Vec<f64>>,
    /// Spheroid volumes of the blood pool (ml).
    pub volumes: VolumePair,
    pub eject: f64,
    pub spacing_mm: f64,
}

impl PhantomRecord {
    pub fn true_ef(&self) -> f64 {
        analytic_ef(self.eject)
    }
}

struct Shape {
    cy: f64,
    cx: f64,
    cos: f64,
    sin: f64,
    long: f64,
    short: f64,
    wall: f64,
}

impl Shape {
    /// Normalized elliptical radius of `(y, x)` for semi-axes grown by `pad`.
    fn rho(&self, y: f64, x: f64, s: f64, pad: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dy * self.cos + dx * self.sin;
        let v = -dy * self.sin + dx * self.cos;
        ((u / (self.long * s + pad)).powi(2) + (v / (self.short * s + pad)).powi(2)).sqrt()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const BLOOD: f64 = 0.08;
const MYOCARDIUM: f64 = 0.8;
const BACKGROUND: f64 = 0.3;
const ATRIUM_BLOOD: f64 = 0.12;

/// Generates one phantom from a seed.
pub fn generate_phantom(params: &PhantomParams, seed: u64) -> Result<PhantomRecord> {
    generate_with(params, &mut keyed_rng(seed, 0, 0))
}

fn generate_with<R: Rng>(p: &PhantomParams, rng: &mut R) -> Result<PhantomRecord> {
    p.validate()?;
    let (t_n, h, w) = (p.frames, p.height, p.width);
    let eject = if p.eject_jitter > 0.0 {
        rng.random_range(p.eject - p.eject_jitter..=p.eject + p.eject_jitter)
    } else {
        p.eject
    };
    let size = rng.random_range(0.85..=1.05);
    let tilt = if p.max_tilt > 0.0 { rng.random_range(-p.max_tilt..=p.max_tilt) } else { 0.0 };
    let (hf, wf) = (h as f64, w as f64);
    let shape = Shape {
        cy: (hf - 1.0) / 2.0 + rng.random_range(-0.04..=0.04) * hf,
        cx: (wf - 1.0) / 2.0 + rng.random_range(-0.04..=0.04) * wf,
        cos: tilt.cos(),
        sin: tilt.sin(),
        long: 0.27 * hf * size,
        short: 0.16 * wf * size,
        wall: 0.07 * wf,
    };
    // Atrium sits beyond the base of the ventricle along the long axis.
    let atrium_centre = (shape.cy - (shape.long + shape.wall + 0.09 * hf) * shape.cos, shape.cx - (shape.long + shape.wall + 0.09 * hf) * shape.sin);
    let atrium_r = 0.08 * wf * size;

    let hw = h * w;
    let mut video = vec![0.0; t_n * hw];
    let mut masks = vec![0u8; t_n * hw];
    let mut true_area = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let s = scale_at(eject, t, t_n);
        // Atrium fills while the ventricle empties.
        let ra = atrium_r * (1.0 + 0.5 * (1.0 - s));
        let (a, b) = (shape.long * s, shape.short * s);
        let (ao, bo) = (a + shape.wall, b + shape.wall);
        let mut areas = vec![PI * a * b, PI * (ao * bo - a * b)];
        if p.atrium {
            areas.push(PI * ra * ra);
        }
        true_area.push(areas);
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                let ri = shape.rho(yf, xf, s, 0.0);
                let ro = shape.rho(yf, xf, s, shape.wall);
                let i = t * hw + y * w + x;
                let mut tissue = BACKGROUND + (MYOCARDIUM - BACKGROUND) * sigmoid((1.0 - ro) * bo / 0.7);
                tissue += (BLOOD - MYOCARDIUM) * sigmoid((1.0 - ri) * b / 0.7);
                masks[i] = if ri <= 1.0 {
                    1
                } else if ro <= 1.0 {
                    2
                } else {
                    0
                };
                if p.atrium {
                    let d = ((yf - atrium_centre.0).powi(2) + (xf - atrium_centre.1).powi(2)).sqrt();
                    let inside = sigmoid((ra - d) / 0.7);
                    tissue = tissue * (1.0 - inside) + ATRIUM_BLOOD * inside;
                    if masks[i] == 0 && d <= ra {
                        masks[i] = 3;
                    }
                }
                video[i] = tissue;
            }
        }
    }
    for v in &mut video {
        let z: f64 = StandardNormal.sample(rng);
        let n: f64 = StandardNormal.sample(rng);
        let speckle = (p.speckle_sigma * z - 0.5 * p.speckle_sigma * p.speckle_sigma).exp();
        *v = *v * speckle + p.noise_std * n;
    }
    let lo = video.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = video.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    video.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));

    let (ed, es) = (0, t_n / 2);
    let mut labels = SparseLabels::new(t_n, h, w);
    for f in [ed, es] {
        labels.insert(f, masks[f * hw..(f + 1) * hw].to_vec())?;
    }
    let sp3 = p.spacing_mm.powi(3);
    let edv = 4.0 / 3.0 * PI * shape.long * shape.short * shape.short * sp3 / 1000.0;
    Ok(PhantomRecord {
        video: Tensor::new(vec![1, t_n, h, w], video)?,
        masks,
        labels,
        ed_idx: ed,
        es_idx: es,
        true_area,
        volumes: VolumePair {
            edv,
            esv: edv * (1.0 - eject).powi(3),
        },
        eject,
        spacing_mm: p.spacing_mm,
    })
}

/// `count` phantoms; record `i` draws from the keyed stream `(seed, 0, i)`.
pub fn generate_set(params: &PhantomParams, count: usize, seed: u64) -> Result<Vec<PhantomRecord>> {
    params.validate()?;
    let ids: Vec<u64> = (0..count as u64).collect();
    try_map_ordered(&ids, |_, &i| generate_with(params, &mut keyed_rng(seed, 0, i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ef_from_labels, temporal_consistency, Geometry};

    fn fixed(eject: f64) -> PhantomParams {
        PhantomParams { eject, eject_jitter: 0.0, ..PhantomParams::default() }
    }

    fn geometry(p: &PhantomParams) -> Geometry {
        Geometry { frames: p.frames, height: p.height, width: p.width, spacing_mm: p.spacing_mm }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = PhantomParams::default();
        assert_eq!(generate_phantom(&p, 5).unwrap(), generate_phantom(&p, 5).unwrap());
        assert_ne!(generate_phantom(&p, 5).unwrap().video, generate_phantom(&p, 6).unwrap().video);
    }

    #[test]
    fn static_phantom_is_temporally_flat() {
        let p = fixed(0.0);
        let r = generate_phantom(&p, 1).unwrap();
        assert_eq!(temporal_consistency(&r.masks, p.frames, 1).unwrap(), 0.0);
        assert_eq!(r.true_ef(), 0.0);
    }

    #[test]
    fn extreme_frames_and_sparse_labels() {
        let p = fixed(0.4);
        let r = generate_phantom(&p, 2).unwrap();
        let areas: Vec<f64> = r.true_area.iter().map(|a| a[0]).collect();
        let argmax = (0..p.frames).max_by(|&a, &b| areas[a].total_cmp(&areas[b])).unwrap();
        let argmin = (0..p.frames).min_by(|&a, &b| areas[a].total_cmp(&areas[b])).unwrap();
        assert_eq!((argmax, argmin), (r.ed_idx, r.es_idx));
        assert_eq!(r.labels.labeled_frames(), vec![r.ed_idx, r.es_idx]);
        assert!(r.video.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn simpson_ef_matches_spheroid() {
        let p = fixed(0.4);
        for seed in 0..5 {
            let r = generate_phantom(&p, seed).unwrap();
            let ef = ef_from_labels(&r.masks, geometry(&p), 1, r.ed_idx, r.es_idx).unwrap();
            let rel = (ef - analytic_ef(0.4)).abs() / analytic_ef(0.4);
            assert!(rel < 0.02, "seed {seed}: {ef} vs {}", analytic_ef(0.4));
        }
    }

    #[test]
    fn blood_pool_is_darker_than_wall() {
        let r = generate_phantom(&PhantomParams::default(), 3).unwrap();
        let mean = |c: u8| {
            let v: Vec<f64> = r.masks.iter().zip(r.video.data()).filter(|(m, _)| **m == c).map(|(_, v)| *v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(2) - mean(1) >= 0.15, "{} vs {}", mean(2), mean(1));
    }

    #[test]
    fn atrium_adds_a_class() {
        let p = PhantomParams { atrium: true, ..PhantomParams::default() };
        let r = generate_phantom(&p, 0).unwrap();
        assert!(r.masks.contains(&3));
        assert_eq!(r.true_area[0].len(), 3);
        assert_eq!(p.class_names(), vec!["endo", "epi", "atrium"]);
    }

    #[test]
    fn invalid_params() {
        for bad in [
            PhantomParams { frames: 3, ..PhantomParams::default() },
            PhantomParams { height: 63, ..PhantomParams::default() },
            PhantomParams { eject: 1.0, ..PhantomParams::default() },
            PhantomParams { eject: 0.1, eject_jitter: 0.2, ..PhantomParams::default() },
        ] {
            assert!(generate_phantom(&bad, 0).is_err());
        }
    }

    #[test]
    fn set_generation_is_order_independent() {
        let p = PhantomParams::default();
        let set = generate_set(&p, 3, 9).unwrap();
        assert_eq!(set[2], generate_with(&p, &mut keyed_rng(9, 0, 2)).unwrap());
    }
}
