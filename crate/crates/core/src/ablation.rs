//! Ablation grid: each axis is a fixed list of configuration variants that are
//! trained and evaluated on identical data with an identical seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{KernelKind, KernelSpec};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{AttentionOrder, FfmTransform, Model, ModelConfig, TemporalAdapter};
use crate::train::{train_loop, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationAxis {
    /// Placement of temporal and spatial attention.
    Order,
    /// Temporal kernel family and bandwidth.
    Kernel,
    /// Frequency branch input transform.
    Ffm,
    /// FacT rank.
    Rank,
    /// Temporal adapter mechanism.
    Adapter,
    /// Multi-scale decoder fusion.
    Fusion,
    /// Backbone width.
    Backbone,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 7] = [
        AblationAxis::Order,
        AblationAxis::Kernel,
        AblationAxis::Ffm,
        AblationAxis::Rank,
        AblationAxis::Adapter,
        AblationAxis::Fusion,
        AblationAxis::Backbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Order => "order",
            AblationAxis::Kernel => "kernel",
            AblationAxis::Ffm => "ffm",
            AblationAxis::Rank => "rank",
            AblationAxis::Adapter => "adapter",
            AblationAxis::Fusion => "fusion",
            AblationAxis::Backbone => "backbone",
        }
    }

    /// Row labels with the configuration each row applies to the base config.
    pub fn variants(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        let kernel = |kind: KernelKind, sigma: f64| KernelSpec {
            kind,
            sigma,
            window: 5,
            normalized: true,
            ..KernelSpec::default()
        };
        let rows: Vec<(&str, ModelConfig)> = match self {
            AblationAxis::Order => vec![
                ("no T-F", with(&|c| c.attention_order = AttentionOrder::SpatialOnly)),
                (
                    "T→S",
                    with(&|c| {
                        c.attention_order = AttentionOrder::TemporalFirst;
                        c.temporal_adapter = TemporalAdapter::TemporalAttention;
                    }),
                ),
                (
                    "S→T-F",
                    with(&|c| {
                        c.attention_order = AttentionOrder::SpatialFirst;
                        c.temporal_adapter = TemporalAdapter::FusionAttention;
                    }),
                ),
                (
                    "T-F→S",
                    with(&|c| {
                        c.attention_order = AttentionOrder::TemporalFirst;
                        c.temporal_adapter = TemporalAdapter::FusionAttention;
                    }),
                ),
            ],
            AblationAxis::Kernel => vec![
                ("Gaussian σ=0.5", with(&|c| c.kernel = kernel(KernelKind::Gaussian, 0.5))),
                ("Gaussian σ=1.0", with(&|c| c.kernel = kernel(KernelKind::Gaussian, 1.0))),
                ("Bilateral σ=1.0", with(&|c| c.kernel = kernel(KernelKind::Bilateral, 1.0))),
                ("Laplacian σ=1.0", with(&|c| c.kernel = kernel(KernelKind::Laplacian, 1.0))),
            ],
            AblationAxis::Ffm => vec![
                ("w/o FFM", with(&|c| c.ffm_enabled = false)),
                (
                    "FFM (raw)",
                    with(&|c| {
                        c.ffm_enabled = true;
                        c.ffm_transform = FfmTransform::Raw;
                    }),
                ),
                (
                    "FFM (Fourier)",
                    with(&|c| {
                        c.ffm_enabled = true;
                        c.ffm_transform = FfmTransform::Fourier;
                    }),
                ),
                (
                    "FFM (Wavelet)",
                    with(&|c| {
                        c.ffm_enabled = true;
                        c.ffm_transform = FfmTransform::Wavelet;
                    }),
                ),
            ],
            AblationAxis::Rank => [4, 8, 16, 32]
                .iter()
                .map(|&r| {
                    let label: &str = match r {
                        4 => "r=4",
                        8 => "r=8",
                        16 => "r=16",
                        _ => "r=32",
                    };
                    (
                        label,
                        with(&|c| {
                            c.fact.enabled = true;
                            c.fact.rank = r;
                        }),
                    )
                })
                .collect(),
            AblationAxis::Adapter => vec![
                (
                    "SAM3D",
                    with(&|c| {
                        c.attention_order = AttentionOrder::TemporalFirst;
                        c.temporal_adapter = TemporalAdapter::TemporalConv;
                    }),
                ),
                (
                    "Med-SA",
                    with(&|c| {
                        c.attention_order = AttentionOrder::Parallel;
                        c.temporal_adapter = TemporalAdapter::TemporalAttention;
                    }),
                ),
                (
                    "Crossframe",
                    with(&|c| {
                        c.attention_order = AttentionOrder::TemporalFirst;
                        c.temporal_adapter = TemporalAdapter::CrossFrame;
                    }),
                ),
                (
                    "Temporal Fusion",
                    with(&|c| {
                        c.attention_order = AttentionOrder::TemporalFirst;
                        c.temporal_adapter = TemporalAdapter::FusionAttention;
                    }),
                ),
            ],
            AblationAxis::Fusion => vec![
                ("w/o multi-scale fusion", with(&|c| c.multiscale_fusion = false)),
                ("w/ multi-scale fusion", with(&|c| c.multiscale_fusion = true)),
            ],
            AblationAxis::Backbone => vec![
                ("B (d=16)", with(&|c| c.embed_dim = 16)),
                ("L (d=24)", with(&|c| c.embed_dim = 24)),
                ("H (d=32)", with(&|c| c.embed_dim = 32)),
            ],
        };
        rows.into_iter().map(|(l, c)| (l.to_string(), c)).collect()
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                Error::invalid(format!("unknown ablation axis `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub dice: f64,
    pub l_pred: Option<f64>,
    pub l_gt: Option<f64>,
    pub trainable_params: usize,
    pub seconds: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("variant,dice,L,L_gt,trainable_params,seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{},{},{},{:.1}",
            r.variant,
            r.dice,
            opt(r.l_pred),
            opt(r.l_gt),
            r.trainable_params,
            r.seconds
        );
    }
    s
}

/// Trains and evaluates every variant of `axis`. Variants are scored on the
/// test split (the validation split if there is no test split) by endo Dice
/// and mean temporal consistency. Writes `<out>/<axis>.csv` and per-variant runs.
pub fn run_ablation(
    axis: AblationAxis,
    dataset: &Dataset,
    base: &ModelConfig,
    train: &TrainConfig,
    out: &Path,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut eval_set = dataset.split(Split::Test);
    if eval_set.is_empty() {
        eval_set = dataset.split(Split::Val);
    }
    if eval_set.is_empty() {
        return Err(Error::invalid("ablation needs a test or validation split"));
    }
    let names = &dataset.manifest.class_names;
    let first = names.first().ok_or_else(|| Error::invalid("dataset declares no classes"))?.clone();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for (i, (label, cfg)) in axis.variants(base).into_iter().enumerate() {
        let start = std::time::Instant::now();
        let mut model = Model::new(cfg, train.seed)?;
        train_loop(dataset, &mut model, train, &out.join(format!("{}_{i}", axis.name())), |_| {})?;
        let report = evaluate(&model, &eval_set, names)?;
        let (l_pred, l_gt) = report.mean_l(&first).unzip();
        let row = AblationRow {
            variant: label,
            dice: report.mean_dice(&first).unwrap_or(0.0),
            l_pred,
            l_gt,
            trainable_params: model.params.trainable_count(),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        rows.push(row);
    }
    let path = out.join(format!("{}.csv", axis.name()));
    fs::write(&path, ablation_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(axis: AblationAxis) -> Vec<String> {
        axis.variants(&ModelConfig::default()).into_iter().map(|v| v.0).collect()
    }

    #[test]
    fn row_sets() {
        assert_eq!(labels(AblationAxis::Order), ["no T-F", "T→S", "S→T-F", "T-F→S"]);
        assert_eq!(labels(AblationAxis::Rank), ["r=4", "r=8", "r=16", "r=32"]);
        assert_eq!(
            labels(AblationAxis::Kernel),
            ["Gaussian σ=0.5", "Gaussian σ=1.0", "Bilateral σ=1.0", "Laplacian σ=1.0"]
        );
        assert_eq!(labels(AblationAxis::Ffm).len(), 4);
        assert_eq!(labels(AblationAxis::Adapter).len(), 4);
        assert_eq!(labels(AblationAxis::Fusion).len(), 2);
        assert_eq!(labels(AblationAxis::Backbone).len(), 3);
    }

    #[test]
    fn every_variant_is_valid() {
        for axis in AblationAxis::ALL {
            for (label, cfg) in axis.variants(&ModelConfig::default()) {
                cfg.validate().unwrap_or_else(|e| panic!("{} {label}: {e}", axis.name()));
            }
        }
    }

    #[test]
    fn axis_parsing() {
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("depth".parse::<AblationAxis>().is_err());
    }
}
