//! On-disk phantom dataset: `manifest.json`, `videos/*.mvst` (f64 `[1, T, H, W]`)
//! and `masks/*.mvst` (u8 `[T, H, W]`, every frame).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomRecord;
use crate::tensor::mvst::{self, MvstArray};
use crate::tensor::Tensor;
use crate::train::loss::SparseLabels;
use crate::train::rng::keyed_rng;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.64,
            val: 0.16,
            test: 0.20,
        }
    }
}

/// Seeded shuffle, then `floor(n·train)` train, `floor(n·val)` val, the rest test.
pub fn assign_splits(n: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    let SplitRatios { train, val, test } = ratios;
    if train < 0.0 || val < 0.0 || test < 0.0 || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {train}/{val}/{test} must be non-negative and sum to 1")));
    }
    // Guard against 0.64 * 100 = 63.99999….
    let count = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let (n_train, n_val) = (count(train), count(val));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, 0, crate::train::rng::SHUFFLE_STREAM));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub video: String,
    pub mask: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub ed: usize,
    pub es: usize,
    /// Frames whose masks may be used for supervision.
    pub labeled_frames: Vec<usize>,
    pub spacing_mm: f64,
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub ef_percent: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_classes: usize,
    /// Names of classes `1..num_classes`.
    pub class_names: Vec<String>,
    pub entries: Vec<DatasetEntry>,
}

/// Writes records with split tags; returns the manifest that was written.
pub fn write_dataset(
    records: &[PhantomRecord],
    class_names: &[String],
    dir: &Path,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetManifest> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    for sub in ["videos", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let splits = assign_splits(records.len(), ratios, seed)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, (r, split)) in records.iter().zip(splits).enumerate() {
        let &[_, t, h, w] = r.video.shape() else {
            return Err(Error::invalid("phantom video must be [1, T, H, W]"));
        };
        let id = format!("phantom_{i:04}");
        let video = format!("videos/{id}.mvst");
        let mask = format!("masks/{id}.mvst");
        mvst::write_tensor(&dir.join(&video), &r.video)?;
        mvst::write(
            &dir.join(&mask),
            &MvstArray::U8 {
                shape: vec![t, h, w],
                data: r.masks.clone(),
            },
        )?;
        entries.push(DatasetEntry {
            id,
            video,
            mask,
            frames: t,
            height: h,
            width: w,
            ed: r.ed_idx,
            es: r.es_idx,
            labeled_frames: r.labels.labeled_frames(),
            spacing_mm: r.spacing_mm,
            edv_ml: r.volumes.edv,
            esv_ml: r.volumes.esv,
            ef_percent: r.true_ef(),
            split,
        });
    }
    let manifest = DatasetManifest {
        num_classes: class_names.len() + 1,
        class_names: class_names.to_vec(),
        entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One loaded video with its dense ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub entry: DatasetEntry,
    /// `[1, T, H, W]`.
    pub video: Tensor,
    /// `[T, H, W]`.
    pub masks: Vec<u8>,
}

impl Sample {
    /// Masks restricted to the annotated frames.
    pub fn sparse_labels(&self) -> Result<SparseLabels> {
        let e = &self.entry;
        let hw = e.height * e.width;
        let mut l = SparseLabels::new(e.frames, e.height, e.width);
        for &f in &e.labeled_frames {
            if f >= e.frames {
                return Err(Error::invalid(format!("{}: labeled frame {f} out of range", e.id)));
            }
            l.insert(f, self.masks[f * hw..(f + 1) * hw].to_vec())?;
        }
        Ok(l)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let video = mvst::read_tensor(&dir.join(&e.video))?;
            if video.shape() != [1, e.frames, e.height, e.width] {
                return Err(Error::Format {
                    path: dir.join(&e.video),
                    detail: format!("shape {:?} does not match manifest", video.shape()),
                });
            }
            let mpath = dir.join(&e.mask);
            let masks = match mvst::read(&mpath)? {
                MvstArray::U8 { shape, data } if shape == [e.frames, e.height, e.width] => data,
                other => {
                    return Err(Error::Format {
                        path: mpath,
                        detail: format!("expected u8 masks {:?}, got {:?}", [e.frames, e.height, e.width], other.shape()),
                    })
                }
            };
            if let Some(&c) = masks.iter().find(|&&c| c as usize >= manifest.num_classes) {
                return Err(Error::Format {
                    path: mpath,
                    detail: format!("class id {c} outside {} classes", manifest.num_classes),
                });
            }
            samples.push(Sample {
                entry: e.clone(),
                video,
                masks,
            });
        }
        if samples.is_empty() {
            return Err(Error::invalid(format!("dataset {} has no entries", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.entry.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_set, PhantomParams};

    #[test]
    fn split_counts_follow_floor_rule() {
        let s = assign_splits(100, SplitRatios::default(), 3).unwrap();
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (64, 16, 20));
        let s8 = assign_splits(8, SplitRatios::default(), 3).unwrap();
        assert_eq!(s8.iter().filter(|&&x| x == Split::Train).count(), 5);
        assert_eq!(s, assign_splits(100, SplitRatios::default(), 3).unwrap());
        assert!(assign_splits(10, SplitRatios { train: 0.5, val: 0.5, test: 0.5 }, 0).is_err());
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = PhantomParams { height: 32, width: 32, ..PhantomParams::default() };
        let recs = generate_set(&p, 3, 1).unwrap();
        let m = write_dataset(&recs, &p.class_names(), dir.path(), SplitRatios::default(), 0).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(fs::read_dir(dir.path().join("videos")).unwrap().count(), 3);
        assert_eq!(fs::read_dir(dir.path().join("masks")).unwrap().count(), 3);
        let ds = Dataset::load(dir.path()).unwrap();
        for (s, r) in ds.samples.iter().zip(&recs) {
            assert_eq!(s.video, r.video);
            assert_eq!(s.masks, r.masks);
            assert_eq!(s.sparse_labels().unwrap(), r.labels);
        }
    }

    #[test]
    fn unwritable_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, b"x").unwrap();
        let p = PhantomParams { height: 16, width: 16, ..PhantomParams::default() };
        let recs = generate_set(&p, 1, 1).unwrap();
        assert!(write_dataset(&recs, &p.class_names(), &file.join("sub"), SplitRatios::default(), 0).is_err());
        assert!(write_dataset(&[], &p.class_names(), dir.path(), SplitRatios::default(), 0).is_err());
    }
}
