//! Small end-to-end run: phantoms on disk, two-phase training, checkpoint
//! round trip and evaluation.

use echoseg::dataset::{write_dataset, Dataset, Split, SplitRatios};
use echoseg::eval::evaluate;
use echoseg::model::{checkpoint, Model, ModelConfig};
use echoseg::phantom::{generate_set, PhantomParams};
use echoseg::train::{train_loop, TrainConfig, CHECKPOINT_DIR};

fn tiny_setup(dir: &std::path::Path) -> (Dataset, ModelConfig, TrainConfig) {
    let params = PhantomParams {
        frames: 4,
        height: 32,
        width: 32,
        ..PhantomParams::default()
    };
    let records = generate_set(&params, 6, 1).unwrap();
    write_dataset(&records, &params.class_names(), dir, SplitRatios::default(), 1).unwrap();
    let ds = Dataset::load(dir).unwrap();
    let train = TrainConfig {
        epochs: 2,
        pretrain_epochs: 1,
        clip_len: 4,
        ..TrainConfig::ablation()
    };
    let cfg = ModelConfig {
        embed_dim: 16,
        frames: 4,
        height: 32,
        width: 32,
        num_classes: ds.manifest.num_classes,
        ..ModelConfig::default()
    };
    (ds, cfg, train)
}

#[test]
fn train_checkpoint_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg, train) = tiny_setup(&tmp.path().join("data"));
    let mut model = Model::new(cfg, 0).unwrap();
    let out = tmp.path().join("run");
    let report = train_loop(&ds, &mut model, &train, &out, |_| {}).unwrap();
    assert_eq!(report.history.len(), 3);

    let restored = checkpoint::load(&out.join(CHECKPOINT_DIR)).unwrap();
    assert_eq!(restored.params, model.params);

    let test = ds.split(Split::Test);
    let a = evaluate(&model, &test, &ds.manifest.class_names).unwrap();
    let b = evaluate(&restored, &test, &ds.manifest.class_names).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), test.len() * ds.manifest.class_names.len());
    assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.dice)));
}

#[test]
fn same_seed_same_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg, train) = tiny_setup(&tmp.path().join("data"));
    let run = |name: &str| {
        let mut m = Model::new(cfg.clone(), 3).unwrap();
        train_loop(&ds, &mut m, &train, &tmp.path().join(name), |_| {}).unwrap();
        m.params
    };
    assert_eq!(run("a"), run("b"));
}
