use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use echoseg::ablation::{run_ablation, AblationAxis};
use echoseg::dataset::{write_dataset, Dataset, Sample, Split};
use echoseg::eval::{build_report, evaluate};
use echoseg::gradcheck_suite::{find_op, registered_ops};
use echoseg::model::checkpoint;
use echoseg::phantom::generate_set;
use echoseg::tensor::gradcheck::check_op;
use echoseg::train::{train_loop, Augmentation, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalSplit, RunConfig};
use crate::{ModelFlags, TrainFlags};

/// Invalid flags or configuration values (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn validated<T>(r: echoseg::Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")).into())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
    match parsed {
        Some(hw) => Ok(hw),
        None => usage(format!("--size must look like 64x64, got `{s}`")),
    }
}

pub struct PhantomArgs {
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub size: Option<String>,
    pub eject: Option<f64>,
    pub eject_jitter: Option<f64>,
    pub atrium: bool,
}

pub fn phantom(a: PhantomArgs) -> Result<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    if let Some(c) = a.count {
        cfg.phantom_count = c;
    }
    if let Some(s) = a.seed {
        cfg.phantom_seed = s;
    }
    if let Some(f) = a.frames {
        cfg.phantom.frames = f;
    }
    if let Some(s) = &a.size {
        (cfg.phantom.height, cfg.phantom.width) = parse_size(s)?;
    }
    if let Some(e) = a.eject {
        cfg.phantom.eject = e;
    }
    if let Some(j) = a.eject_jitter {
        cfg.phantom.eject_jitter = j;
    }
    cfg.phantom.atrium |= a.atrium;
    validated(cfg.phantom.validate())?;
    if cfg.phantom_count == 0 {
        return usage("--count must be positive");
    }
    let out = RunConfig::require(&cfg.out, "out")?.clone();
    let records = generate_set(&cfg.phantom, cfg.phantom_count, cfg.phantom_seed)?;
    let manifest = write_dataset(&records, &cfg.phantom.class_names(), &out, cfg.splits, cfg.phantom_seed)?;
    cfg.echo(&out)?;
    let count = |s: Split| manifest.entries.iter().filter(|e| e.split == s).count();
    println!(
        "wrote {} phantoms to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(ExitCode::SUCCESS)
}

fn apply_train_flags(cfg: &mut RunConfig, t: &TrainFlags) {
    let tc = &mut cfg.train;
    if let Some(v) = t.epochs {
        tc.epochs = v;
    }
    if let Some(v) = t.pretrain_epochs {
        tc.pretrain_epochs = v;
    }
    if let Some(v) = t.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = t.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = t.clip_len {
        tc.clip_len = v;
    }
    if let Some(v) = t.seed {
        tc.seed = v;
    }
    if t.no_augment {
        tc.augment = Augmentation::none();
    }
}

/// Aligns the model geometry with the dataset and the clip length.
fn fit_model_to_data(cfg: &mut RunConfig, ds: &Dataset) {
    let e = &ds.samples[0].entry;
    cfg.model.height = e.height;
    cfg.model.width = e.width;
    cfg.model.frames = cfg.train.clip_len;
    cfg.model.num_classes = ds.manifest.num_classes;
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn train(
    data: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    m: &ModelFlags,
    t: &TrainFlags,
) -> Result<ExitCode> {
    let mut cfg = load_config(config.as_deref())?;
    cfg.data = data.or(cfg.data);
    cfg.out = out.or(cfg.out);
    if let Some(v) = m.embed_dim {
        cfg.model.embed_dim = v;
    }
    if let Some(v) = m.depth {
        cfg.model.depth = v;
    }
    if let Some(v) = m.rank {
        cfg.model.fact.rank = v;
    }
    if m.no_fact {
        cfg.model.fact.enabled = false;
    }
    apply_train_flags(&mut cfg, t);
    let data = RunConfig::require(&cfg.data, "data")?.clone();
    let out = RunConfig::require(&cfg.out, "out")?.clone();
    validated(cfg.train.validate())?;
    let ds = load_dataset(&data)?;
    fit_model_to_data(&mut cfg, &ds);
    validated(cfg.model.validate())?;
    cfg.echo(&out)?;

    let mut model = echoseg::model::Model::new(cfg.model.clone(), cfg.train.seed)?;
    println!(
        "training: {} parameters, {} videos (train {}, val {})",
        model.params.total_count(),
        ds.samples.len(),
        ds.split(Split::Train).len(),
        ds.split(Split::Val).len()
    );
    let report = train_loop(&ds, &mut model, &cfg.train, &out, |e| {
        let val = e.val_dice.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
        println!(
            "epoch {:>3} [{:?}] loss {:.4} val_dice {val} ({:.1}s)",
            e.epoch, e.phase, e.train_loss, e.wall_seconds
        );
    })?;
    println!(
        "best epoch {} (val dice {}); frozen-backbone trainable fraction {:.4}",
        report.best_epoch,
        report.best_val_dice.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
        echoseg::fact::trainable_fraction(&model.params)
    );
    Ok(ExitCode::SUCCESS)
}

fn select(ds: &Dataset, split: EvalSplit) -> Vec<&Sample> {
    match split {
        EvalSplit::All => ds.samples.iter().collect(),
        EvalSplit::Train => ds.split(Split::Train),
        EvalSplit::Val => ds.split(Split::Val),
        EvalSplit::Test => ds.split(Split::Test),
    }
}

pub fn eval(
    data: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    report: Option<PathBuf>,
    config: Option<PathBuf>,
    split: Option<EvalSplit>,
    ground_truth: bool,
) -> Result<ExitCode> {
    let mut cfg = load_config(config.as_deref())?;
    cfg.data = data.or(cfg.data);
    cfg.ckpt = ckpt.or(cfg.ckpt);
    cfg.report = report.or(cfg.report);
    if let Some(s) = split {
        cfg.eval_split = s;
    }
    let data = RunConfig::require(&cfg.data, "data")?.clone();
    let report_path = RunConfig::require(&cfg.report, "report")?.clone();
    if !ground_truth {
        RunConfig::require(&cfg.ckpt, "ckpt")?;
    }
    let ds = load_dataset(&data)?;
    let samples = select(&ds, cfg.eval_split);
    if samples.is_empty() {
        bail!("split {:?} of {} is empty", cfg.eval_split, data.display());
    }
    let names = &ds.manifest.class_names;
    let start = Instant::now();
    let rep = if ground_truth {
        let gt: Vec<Vec<u8>> = samples.iter().map(|s| s.masks.clone()).collect();
        build_report(&samples, &gt, names)?
    } else {
        let dir = cfg.ckpt.as_ref().expect("checked above");
        let model = checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
        evaluate(&model, &samples, names)?
    };
    rep.write(&report_path)?;
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        cfg.echo(parent)?;
    }
    for s in rep.structures() {
        let l = rep.mean_l(&s).map_or_else(|| "-".into(), |(p, g)| format!("{p:.4} (gt {g:.4})"));
        println!("{s}: dice {:.4}, L {l}", rep.mean_dice(&s).unwrap_or(0.0));
    }
    match rep.ef_pearson() {
        Ok(r) => println!("EF pearson r = {r:.4}"),
        Err(e) => println!("EF pearson undefined: {e}"),
    }
    println!("report written to {} in {:.1}s", report_path.display(), start.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(tol: Option<f64>, op: Option<&str>, seeds: u64) -> Result<ExitCode> {
    if let Some(t) = tol {
        if !(t > 0.0) {
            return usage("--tol must be positive");
        }
    }
    let ops = match op {
        Some(name) => match find_op(name) {
            Some(o) => vec![o],
            None => {
                let names: Vec<String> = registered_ops().iter().map(|o| o.name().to_string()).collect();
                return usage(format!("unknown op `{name}`; registered: {}", names.join(", ")));
            }
        },
        None => registered_ops(),
    };
    let start = Instant::now();
    println!("{:<28} {:>12} {:>10}  result", "op", "max_rel_err", "tol");
    let mut failed = 0;
    for o in &ops {
        let mut worst = 0.0f64;
        let mut tol_used = 0.0;
        for seed in 0..seeds.max(1) {
            let r = check_op(o.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed), tol)?;
            worst = worst.max(r.max_rel_error);
            tol_used = r.tol;
        }
        let pass = worst <= tol_used;
        failed += usize::from(!pass);
        println!("{:<28} {:>12.3e} {:>10.1e}  {}", o.name(), worst, tol_used, if pass { "PASS" } else { "FAIL" });
    }
    println!(
        "{} of {} ops passed in {:.1}s",
        ops.len() - failed,
        ops.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub fn ablate(
    axis: &str,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
    t: &TrainFlags,
) -> Result<ExitCode> {
    let axis: AblationAxis = match axis.parse() {
        Ok(a) => a,
        Err(e) => return usage(e.to_string()),
    };
    let mut cfg = load_config(config.as_deref())?;
    if config.is_none() {
        cfg.train = TrainConfig::ablation();
    }
    cfg.data = data.or(cfg.data);
    cfg.out = out.or(cfg.out);
    apply_train_flags(&mut cfg, t);
    let data = RunConfig::require(&cfg.data, "data")?.clone();
    let out = RunConfig::require(&cfg.out, "out")?.clone();
    validated(cfg.train.validate())?;
    let ds = load_dataset(&data)?;
    fit_model_to_data(&mut cfg, &ds);
    validated(cfg.model.validate())?;
    cfg.echo(&out)?;
    println!("ablation `{}`: {} videos", axis.name(), ds.samples.len());
    let rows = run_ablation(axis, &ds, &cfg.model, &cfg.train, &out, |r| {
        let l = r.l_pred.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
        println!("{:<24} dice {:.4}  L {l}  ({:.1}s)", r.variant, r.dice, r.seconds);
    })?;
    println!("{} rows written to {}", rows.len(), out.join(format!("{}.csv", axis.name())).display());
    Ok(ExitCode::SUCCESS)
}
