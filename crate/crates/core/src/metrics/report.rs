//! Per-structure scoring of label volumes and the CSV evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use super::distance::{assd, boundary, hausdorff};
use super::overlap::{class_mask, dice};
use super::stats::{mean_std, pearson};
use super::temporal::temporal_consistency;
use super::volume::{ejection_fraction, is_pathological, mask_volume, VolumePair};
use crate::error::{Error, Result};

/// Geometry of a `[T, H, W]` label volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub spacing_mm: f64,
}

impl Geometry {
    fn check(&self, labels: &[u8]) -> Result<()> {
        if labels.len() != self.frames * self.height * self.width {
            return Err(Error::invalid(format!(
                "label volume has {} entries, expected {}x{}x{}",
                labels.len(),
                self.frames,
                self.height,
                self.width
            )));
        }
        if self.spacing_mm <= 0.0 {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureScore {
    pub video_id: String,
    pub structure: String,
    /// Mean per-frame Dice.
    pub dice: f64,
    /// Mean per-frame Hausdorff over frames where both boundaries exist; `None` if none do.
    pub dh_mm: Option<f64>,
    pub da_mm: Option<f64>,
    pub l_pred: Option<f64>,
    pub l_gt: Option<f64>,
}

/// Scores one class of a predicted label volume against ground truth.
pub fn score_structure(
    video_id: &str,
    structure: &str,
    class: u8,
    pred: &[u8],
    gt: &[u8],
    g: Geometry,
) -> Result<StructureScore> {
    g.check(pred)?;
    g.check(gt)?;
    let hw = g.height * g.width;
    let (mut dices, mut dhs, mut das) = (Vec::new(), Vec::new(), Vec::new());
    for (p, t) in pred.chunks(hw).zip(gt.chunks(hw)) {
        let (pm, tm) = (class_mask(p, class), class_mask(t, class));
        dices.push(dice(&pm, &tm)?);
        let (pb, tb) = (boundary(&pm, g.height, g.width), boundary(&tm, g.height, g.width));
        if !pb.is_empty() && !tb.is_empty() {
            dhs.push(hausdorff(&pb, &tb, g.spacing_mm)?);
            das.push(assd(&pb, &tb, g.spacing_mm)?);
        }
    }
    let mean = |v: &[f64]| mean_std(v).map(|(m, _)| m);
    Ok(StructureScore {
        video_id: video_id.to_string(),
        structure: structure.to_string(),
        dice: mean(&dices).unwrap_or(0.0),
        dh_mm: mean(&dhs),
        da_mm: mean(&das),
        l_pred: temporal_consistency(pred, g.frames, class).ok(),
        l_gt: temporal_consistency(gt, g.frames, class).ok(),
    })
}

/// Ejection fraction (%) from single-view disk volumes of `class` at the ED and ES frames.
pub fn ef_from_labels(labels: &[u8], g: Geometry, class: u8, ed: usize, es: usize) -> Result<f64> {
    g.check(labels)?;
    let hw = g.height * g.width;
    let vol = |f: usize| -> Result<f64> {
        if f >= g.frames {
            return Err(Error::invalid(format!("frame {f} outside {} frames", g.frames)));
        }
        mask_volume(&class_mask(&labels[f * hw..(f + 1) * hw], class), g.height, g.width, g.spacing_mm)
    };
    ejection_fraction(VolumePair { edv: vol(ed)?, esv: vol(es)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfRow {
    pub video_id: String,
    pub ef_pred: Option<f64>,
    pub ef_true: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<StructureScore>,
    pub ef: Vec<EfRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn fmt_ms(v: &[f64]) -> String {
    mean_std(v).map_or_else(|| "-".to_string(), |(m, s)| format!("{m:.6} ± {s:.6}"))
}

impl EvalReport {
    pub fn structures(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.structure) {
                out.push(r.structure.clone());
            }
        }
        out
    }

    pub fn mean_dice(&self, structure: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.structure == structure).map(|r| r.dice).collect();
        mean_std(&v).map(|(m, _)| m)
    }

    /// Means of (L of predictions, L of ground truth) over videos where both are defined.
    pub fn mean_l(&self, structure: &str) -> Option<(f64, f64)> {
        let pairs: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.structure == structure)
            .filter_map(|r| Some((r.l_pred?, r.l_gt?)))
            .collect();
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let g: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        Some((mean_std(&p)?.0, mean_std(&g)?.0))
    }

    /// Correlation of predicted and true EF over videos with a defined prediction.
    pub fn ef_pearson(&self) -> Result<f64> {
        let (p, t): (Vec<f64>, Vec<f64>) = self.ef.iter().filter_map(|r| Some((r.ef_pred?, r.ef_true))).unzip();
        pearson(&p, &t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("video_id,structure,dice,dh_mm,da_mm,L,L_gt\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{},{},{}",
                r.video_id,
                r.structure,
                r.dice,
                fmt_opt(r.dh_mm),
                fmt_opt(r.da_mm),
                fmt_opt(r.l_pred),
                fmt_opt(r.l_gt)
            );
        }
        s.push_str("\n# summary (mean ± std)\nstructure,n,dice,dh_mm,da_mm,L,L_gt\n");
        for st in self.structures() {
            let rows: Vec<&StructureScore> = self.rows.iter().filter(|r| r.structure == st).collect();
            let col = |f: &dyn Fn(&StructureScore) -> Option<f64>| rows.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let _ = writeln!(
                s,
                "{st},{},{},{},{},{},{}",
                rows.len(),
                fmt_ms(&col(&|r| Some(r.dice))),
                fmt_ms(&col(&|r| r.dh_mm)),
                fmt_ms(&col(&|r| r.da_mm)),
                fmt_ms(&col(&|r| r.l_pred)),
                fmt_ms(&col(&|r| r.l_gt)),
            );
        }
        if !self.ef.is_empty() {
            s.push_str("\n# ejection fraction\nvideo_id,ef_pred,ef_true,risk_flag\n");
            for r in &self.ef {
                let flag = match r.ef_pred {
                    Some(ef) if is_pathological(ef) => "EF<45",
                    _ => "",
                };
                let _ = writeln!(s, "{},{},{:.6},{flag}", r.video_id, fmt_opt(r.ef_pred), r.ef_true);
            }
            let _ = writeln!(s, "pearson,{}", fmt_opt(self.ef_pearson().ok()));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_video(frames: usize, n: usize, radii: &[f64]) -> Vec<u8> {
        let c = (n as f64 - 1.0) / 2.0;
        let mut out = Vec::new();
        for &r in radii.iter().take(frames) {
            for i in 0..n * n {
                let (y, x) = ((i / n) as f64 - c, (i % n) as f64 - c);
                let d = (y * y + x * x).sqrt();
                out.push(if d <= r { 1 } else if d <= r + 3.0 { 2 } else { 0 });
            }
        }
        out
    }

    fn geom(frames: usize, n: usize) -> Geometry {
        Geometry { frames, height: n, width: n, spacing_mm: 1.0 }
    }

    #[test]
    fn ground_truth_against_itself() {
        let gt = disk_video(4, 24, &[8.0, 6.0, 5.0, 7.0]);
        let s = score_structure("v", "endo", 1, &gt, &gt, geom(4, 24)).unwrap();
        assert_eq!(s.dice, 1.0);
        assert_eq!(s.dh_mm, Some(0.0));
        assert_eq!(s.da_mm, Some(0.0));
        assert_eq!(s.l_pred, s.l_gt);
    }

    #[test]
    fn empty_prediction_is_reported_not_scored() {
        let gt = disk_video(3, 16, &[5.0, 4.0, 5.0]);
        let s = score_structure("v", "endo", 1, &vec![0; gt.len()], &gt, geom(3, 16)).unwrap();
        assert_eq!(s.dice, 0.0);
        assert_eq!(s.dh_mm, None);
        assert_eq!(s.l_pred, None);
        let r = EvalReport { rows: vec![s], ef: vec![] };
        assert!(r.to_csv().contains("v,endo,0.000000,-,-,-,"));
    }

    #[test]
    fn report_has_summary_and_ef_block() {
        let gt = disk_video(4, 24, &[8.0, 6.0, 5.0, 7.0]);
        let g = geom(4, 24);
        let mut r = EvalReport::default();
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            r.rows.push(score_structure(id, "endo", 1, &gt, &gt, g).unwrap());
            r.rows.push(score_structure(id, "epi", 2, &gt, &gt, g).unwrap());
            let ef = ef_from_labels(&gt, g, 1, 0, 2).unwrap();
            r.ef.push(EfRow { video_id: id.to_string(), ef_pred: Some(ef + i as f64), ef_true: ef + 2.0 * i as f64 });
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().filter(|l| l.starts_with("a,")).count(), 3);
        assert!(csv.contains("# summary"));
        assert!(csv.contains("pearson,1.000000"));
        assert_eq!(r.mean_dice("epi"), Some(1.0));
        assert!(ef_from_labels(&gt, g, 1, 0, 2).unwrap() > 50.0);
    }
}
