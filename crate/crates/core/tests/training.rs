mod common;

use common::*;
use pcl_ensemble::corpus::{DataSplit, SplitName};
use pcl_ensemble::ensemble::PredictionSet;
use pcl_ensemble::evaluation::MetricsReport;
use pcl_ensemble::models::Model;
use pcl_ensemble::training::{
    set_seed, stepwise_lr, train, ModelSource, Registry, TrainRunSpec, CHECKPOINT_FILE, METRICS_FILE,
    SPEC_FILE,
};
use pcl_ensemble::Error;
use rand::Rng;

fn training_f1(model: &Model, split: &DataSplit) -> f64 {
    let probs = model
        .as_classifier()
        .predict_texts(&split.texts())
        .unwrap();
    let preds: Vec<u8> = probs.iter().map(|p| u8::from(p.positive() >= 0.5)).collect();
    MetricsReport::from_aligned(&preds, &split.label_vec().unwrap()).f1
}

fn check_overfit(spec: TrainRunSpec) {
    let dir = tempfile::tempdir().unwrap();
    let out = overfit(&spec, dir.path());
    let r = &out.record;
    assert_eq!(r.per_epoch.len(), spec.max_epochs);
    assert_eq!(r.best_dev_f1, 1.0, "{}: {:?}", spec.run_id, r.per_epoch);
    let train = toy_split(SplitName::Train, 32, 5);
    assert_eq!(training_f1(&out.model, &train), 1.0);
    let first = r.per_epoch[0].train_loss;
    let last = r.per_epoch.last().unwrap().train_loss;
    assert!(last < first, "{}: loss {first} -> {last}", spec.run_id);
}

#[test]
fn cnn_overfits_toy_set() {
    check_overfit(cnn_spec(0));
}

#[test]
fn bilstm_overfits_toy_set() {
    check_overfit(bilstm_spec(0));
}

#[test]
fn transformer_overfits_toy_set() {
    check_overfit(transformer_spec(0));
}

#[test]
fn record_invariants_and_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = cnn_spec(3);
    spec.max_epochs = 6;
    let out = overfit(&spec, dir.path());
    let r = &out.record;
    let max = r.per_epoch.iter().map(|e| e.dev_f1).fold(f64::MIN, f64::max);
    assert_eq!(r.best_dev_f1, max);
    let first_best = r.per_epoch.iter().find(|e| e.dev_f1 == max).unwrap().epoch;
    assert_eq!(r.best_epoch, first_best);
    for f in [SPEC_FILE, METRICS_FILE, CHECKPOINT_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let (_, info) = Model::load_checkpoint(&r.checkpoint).unwrap();
    assert_eq!(info.epoch, r.best_epoch);
    assert_eq!(info.dev_f1, r.best_dev_f1);
}

#[test]
fn identical_seeds_reproduce_runs_exactly() {
    for make in [cnn_spec as fn(u64) -> TrainRunSpec, bilstm_spec] {
        let mut spec = make(4);
        spec.max_epochs = 5;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = overfit(&spec, a.path()).record;
        let rb = overfit(&spec, b.path()).record;
        assert!((ra.best_dev_f1 - rb.best_dev_f1).abs() < 1e-6);
        assert_eq!(ra.per_epoch, rb.per_epoch);
        assert_eq!(
            std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
            std::fs::read(b.path().join(CHECKPOINT_FILE)).unwrap()
        );
    }
}

#[test]
fn reloaded_checkpoint_reproduces_dev_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let train_split = toy_split(SplitName::Train, 32, 5);
    let dev = toy_split(SplitName::Dev, 16, 77);
    let vocab = toy_vocab(&train_split);
    let mut spec = bilstm_spec(1);
    spec.max_epochs = 4;
    let source = ModelSource::Words {
        vocab: &vocab,
        pretrained: None,
    };
    let out = train(&spec, source, &train_split, &dev, dir.path()).unwrap();
    let saved = out.record.load_dev_predictions().unwrap();
    let (model, _) = Model::load_checkpoint(&out.record.checkpoint).unwrap();
    let fresh = pcl_ensemble::training::predict_split(&model, &dev, &spec.run_id).unwrap();
    assert_eq!(saved.entries, fresh.entries);
    let labels = dev.labels().unwrap();
    let preds = pcl_ensemble::ensemble::apply_threshold(&fresh, 0.5);
    let f1 = pcl_ensemble::evaluation::prf1(&preds, &labels).unwrap().f1;
    assert_eq!(f1, out.record.best_dev_f1);
}

#[test]
fn invalid_runs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let train_split = toy_split(SplitName::Train, 8, 1);
    let vocab = toy_vocab(&train_split);
    let source = ModelSource::Words {
        vocab: &vocab,
        pretrained: None,
    };
    let mut spec = cnn_spec(0);
    spec.max_epochs = 0;
    let err = train(&spec, source, &train_split, &train_split, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");

    let empty = DataSplit {
        name: SplitName::Dev,
        records: vec![],
    };
    let err = train(&cnn_spec(0), source, &train_split, &empty, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

#[test]
fn diverging_run_reports_epoch_and_batch() {
    let dir = tempfile::tempdir().unwrap();
    let train_split = toy_split(SplitName::Train, 8, 1);
    let vocab = toy_vocab(&train_split);
    let source = ModelSource::Words {
        vocab: &vocab,
        pretrained: None,
    };
    let mut spec = cnn_spec(0);
    spec.base_lr = 1e300;
    spec.max_epochs = 3;
    let err = train(&spec, source, &train_split, &train_split, dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numeric(_)), "{msg}");
    assert!(msg.contains("epoch") && msg.contains("batch"), "{msg}");
}

#[test]
fn stepwise_lr_is_non_increasing() {
    let mut rng = rand::rng();
    for _ in 0..200 {
        let base = rng.random_range(1e-6..1e-2);
        let step = rng.random_range(1..6);
        let gamma = rng.random_range(0.05..=1.0);
        assert_eq!(stepwise_lr(1, base, step, gamma), base);
        for e in 1..30 {
            assert!(stepwise_lr(e + 1, base, step, gamma) <= stepwise_lr(e, base, step, gamma));
        }
    }
}

#[test]
fn dropout_masks_are_reproducible() {
    let draw = |seed| {
        let mut s = set_seed(seed);
        (0..32).map(|_| s.dropout.random::<f64>() < 0.5).collect::<Vec<_>>()
    };
    assert_eq!(draw(7), draw(7));
    assert_ne!(draw(7), draw(8));
}

#[test]
fn registry_appends_and_keeps_latest_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = cnn_spec(0);
    spec.max_epochs = 1;
    let out = overfit(&spec, &dir.path().join("run"));
    let registry = Registry::new(dir.path().join("registry.jsonl"));
    assert!(registry.load().unwrap().is_empty());
    registry.append(&out.record).unwrap();
    let mut second = out.record.clone();
    second.best_dev_f1 = 0.25;
    registry.append(&second).unwrap();
    let loaded = registry.load().unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].best_dev_f1, 0.25);
    assert!(registry.contains(&spec.run_id).unwrap());

    std::fs::write(registry.path(), "{ not json\n").unwrap();
    assert!(matches!(registry.load(), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn saved_dev_predictions_cover_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = cnn_spec(2);
    spec.max_epochs = 2;
    let out = overfit(&spec, dir.path());
    let set: PredictionSet = out.record.load_dev_predictions().unwrap();
    assert_eq!(set.len(), 32);
    assert!(set.entries.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
}
