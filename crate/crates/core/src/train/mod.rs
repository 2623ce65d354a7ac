//! Sparse-label training: clip sampling, augmentation, masked loss, AdamW and
//! best-validation checkpointing. Per-sample gradients are computed on
//! independent tapes (in parallel when enabled) and summed in sample order,
//! so a fixed seed reproduces the same run bit-for-bit.

pub mod augment;
pub mod clip;
pub mod loss;
pub mod optim;
pub mod rng;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use augment::{AugmentDraw, Augmentation};
pub use clip::{clip_indices, sample_clip};
pub use loss::{masked_loss, SegLossTarget, SparseLabels};
pub use optim::AdamW;

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::mean_foreground_dice;
use crate::model::{checkpoint, Model, ParamGroup};
use crate::parallel::try_map_ordered;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fine-tuning epochs with the backbone frozen.
    pub epochs: usize,
    /// Epochs of backbone training (factorized cores held at zero) before freezing.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub clip_len: usize,
    pub augment: Augmentation,
    pub seed: u64,
    /// Reserved; only `"constant"` is implemented.
    pub lr_schedule: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            epochs: 30,
            pretrain_epochs: 5,
            batch_size: 4,
            clip_len: 8,
            augment: Augmentation::default(),
            seed: 0,
            lr_schedule: "constant".into(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale phantom recipe: 5 backbone epochs, 30 frozen-backbone epochs.
    pub fn toy() -> Self {
        Self {
            learning_rate: 5e-3,
            ..Self::default()
        }
    }

    /// Mini-dataset recipe for ablation sweeps: with a handful of training
    /// videos, per-sample steps at a lower rate keep every variant stable.
    pub fn ablation() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.clip_len < 2 {
            return Err(Error::invalid(format!("clip_len must be at least 2, got {}", self.clip_len)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.lr_schedule != "constant" {
            return Err(Error::invalid(format!("unsupported lr_schedule `{}`", self.lr_schedule)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based, counting pretraining epochs first.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LAST_GOOD_DIR: &str = "last_good";

pub fn metrics_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_dice,wall_seconds\n");
    for e in history {
        let val = e.val_dice.map_or_else(|| "-".to_string(), |v| format!("{v:.17e}"));
        let _ = writeln!(s, "{},{:.17e},{val},{:.3}", e.epoch, e.train_loss, e.wall_seconds);
    }
    s
}

/// Loss and parameter gradients of one augmented training clip.
fn sample_gradients(
    model: &Model,
    sample: &Sample,
    cfg: &TrainConfig,
    epoch: usize,
    key: u64,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let e = &sample.entry;
    let labels = sample.sparse_labels()?;
    let (clip, clip_labels) = sample_clip(&sample.video, &labels, e.ed, e.es, cfg.clip_len)?;
    let draw = AugmentDraw::sample(&cfg.augment, &mut rng::keyed_rng(cfg.seed, epoch as u64, key));
    let (clip, clip_labels) = augment::apply(&clip, &clip_labels, &draw)?;
    let mut shape = vec![1];
    shape.extend_from_slice(clip.shape());
    let video = clip.into_reshape(&shape)?;
    let target = SegLossTarget::from_sparse(&[clip_labels])?;
    let tape = Tape::new();
    let p = model.params.bind(&tape)?;
    let logits = model.logits_var(&tape, &p, &video)?;
    let loss = tape.seg_loss(logits, &target)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, p.collect(&mut grads)))
}

fn set_phase(model: &mut Model, phase: Phase) {
    match phase {
        Phase::Pretrain => {
            model.params.set_all_trainable(true);
            model.params.set_group_trainable(ParamGroup::Fact, false);
        }
        Phase::Finetune => model.params.freeze_backbone(),
    }
}

fn divergence(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Diverged { epoch },
        other => other,
    }
}

/// One pass over `train` in a keyed shuffle order. Returns the mean sample loss.
fn run_epoch(model: &mut Model, opt: &mut AdamW, train: &[&Sample], cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::keyed_rng(cfg.seed, epoch as u64, rng::SHUFFLE_STREAM));
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let results = {
            let m: &Model = model;
            try_map_ordered(batch, |_, &i| sample_gradients(m, train[i], cfg, epoch, i as u64))
                .map_err(|e| divergence(e, epoch))?
        };
        let mut sum: Vec<Option<Tensor>> = vec![None; model.params.len()];
        for (loss, grads) in results {
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss;
            for (acc, g) in sum.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        sum.iter_mut().flatten().for_each(|g| g.scale_inplace(inv));
        opt.step(&mut model.params, &sum)?;
        if !model.params.params().iter().all(|p| p.value.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(total / train.len() as f64)
}

fn save_checkpoint(model: &Model, opt: &AdamW, dir: &Path, epoch: usize) -> Result<()> {
    checkpoint::save(model, dir, Some(epoch))?;
    opt.save(&dir.join("optimizer"), &model.params)
}

/// Trains `model` on the train split, selecting weights by validation Dice.
/// Writes `metrics.csv` and `checkpoint/` under `out`; on return `model`
/// holds the selected weights. `on_epoch` observes each finished epoch.
pub fn train_loop(
    dataset: &Dataset,
    model: &mut Model,
    cfg: &TrainConfig,
    out: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    if train.is_empty() {
        return Err(Error::invalid("dataset has no training videos"));
    }
    if model.config.num_classes != dataset.manifest.num_classes {
        return Err(Error::invalid(format!(
            "model predicts {} classes, dataset has {}",
            model.config.num_classes, dataset.manifest.num_classes
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let start = Instant::now();
    let phases = std::iter::repeat_n(Phase::Pretrain, cfg.pretrain_epochs).chain(std::iter::repeat_n(Phase::Finetune, cfg.epochs));
    let mut history = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut best_params = None;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut current = None;
    for (i, phase) in phases.enumerate() {
        let epoch = i + 1;
        if current != Some(phase) {
            set_phase(model, phase);
            opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
            current = Some(phase);
        }
        let snapshot = model.params.clone();
        let outcome = run_epoch(model, &mut opt, &train, cfg, epoch).and_then(|loss| {
            let val_dice = if val.is_empty() { None } else { Some(mean_foreground_dice(model, &val)?) };
            Ok((loss, val_dice))
        });
        let (loss, val_dice) = match outcome.map_err(|e| divergence(e, epoch)) {
            Ok(r) => r,
            Err(err @ Error::Diverged { .. }) => {
                model.params = snapshot;
                save_checkpoint(model, &opt, &out.join(LAST_GOOD_DIR), epoch - 1)?;
                fs::write(&metrics_path, metrics_csv(&history)).map_err(|e| Error::io(&metrics_path, e))?;
                return Err(err);
            }
            Err(e) => return Err(e),
        };
        let log = EpochLog {
            epoch,
            phase,
            train_loss: loss,
            val_dice,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        history.push(log);
        fs::write(&metrics_path, metrics_csv(&history)).map_err(|e| Error::io(&metrics_path, e))?;

        let eligible = phase == Phase::Finetune || cfg.epochs == 0;
        // Without a validation split the most recent eligible epoch wins.
        let score = val_dice.unwrap_or(f64::INFINITY);
        if eligible && best.is_none_or(|(b, _)| score > b || val_dice.is_none()) {
            best = Some((score, epoch));
            best_params = Some(model.params.clone());
            save_checkpoint(model, &opt, &out.join(CHECKPOINT_DIR), epoch)?;
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    let (best_val, best_epoch) = best.unwrap_or((f64::NAN, 0));
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_dice: (!val.is_empty() && best_epoch > 0).then_some(best_val),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_dataset, SplitRatios};
    use crate::model::ModelConfig;
    use crate::phantom::{generate_set, PhantomParams};

    fn tiny(dir: &Path, count: usize) -> (Dataset, ModelConfig) {
        let p = PhantomParams { height: 32, width: 32, ..PhantomParams::default() };
        let recs = generate_set(&p, count, 4).unwrap();
        write_dataset(&recs, &p.class_names(), dir, SplitRatios { train: 0.5, val: 0.5, test: 0.0 }, 1).unwrap();
        let cfg = ModelConfig { embed_dim: 8, height: 32, width: 32, ..ModelConfig::default() };
        (Dataset::load(dir).unwrap(), cfg)
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 1, pretrain_epochs: 1, batch_size: 2, learning_rate: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn smoke_run_writes_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, mcfg) = tiny(&dir.path().join("data"), 4);
        let mut model = Model::new(mcfg, 0).unwrap();
        let out = dir.path().join("run");
        let rep = train_loop(&ds, &mut model, &quick(), &out, |_| {}).unwrap();
        assert_eq!(rep.history.len(), 2);
        assert!(rep.history.iter().all(|e| e.train_loss.is_finite()));
        assert_eq!(rep.best_epoch, 2);
        let csv = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_dice,wall_seconds\n"));
        assert_eq!(csv.lines().count(), 3);
        let back = checkpoint::load(&out.join(CHECKPOINT_DIR)).unwrap();
        assert_eq!(back.params, model.params);
        assert!(out.join(CHECKPOINT_DIR).join("optimizer/state.json").exists());
    }

    #[test]
    fn fixed_seed_reproduces_losses() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, mcfg) = tiny(&dir.path().join("data"), 4);
        let run = |name: &str| {
            let mut model = Model::new(mcfg.clone(), 0).unwrap();
            let rep = train_loop(&ds, &mut model, &quick(), &dir.path().join(name), |_| {}).unwrap();
            (rep.history.iter().map(|e| (e.train_loss, e.val_dice)).collect::<Vec<_>>(), model.params)
        };
        assert_eq!(run("a"), run("b"));
    }

    #[test]
    fn phases_control_trainable_groups() {
        let mut m = Model::new(ModelConfig { embed_dim: 8, height: 32, width: 32, ..ModelConfig::default() }, 0).unwrap();
        set_phase(&mut m, Phase::Pretrain);
        assert!(m.params.params().iter().all(|p| p.trainable == (p.group != ParamGroup::Fact)));
        set_phase(&mut m, Phase::Finetune);
        assert!(m.params.params().iter().all(|p| p.trainable == (p.group != ParamGroup::Backbone)));
    }

    #[test]
    fn divergence_aborts_and_keeps_last_good() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, mcfg) = tiny(&dir.path().join("data"), 2);
        let mut model = Model::new(mcfg, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 3, pretrain_epochs: 0, ..quick() };
        let out = dir.path().join("run");
        let err = train_loop(&ds, &mut model, &cfg, &out, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(checkpoint::load(&out.join(LAST_GOOD_DIR)).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { clip_len: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_schedule: "cosine".into(), ..TrainConfig::default() }.validate().is_err());
        let err = serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1, "bogus": 1}"#);
        assert!(err.is_err());
    }
}
