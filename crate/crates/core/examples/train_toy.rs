//! Train a CNN on a small separable corpus, then reload its best checkpoint.

use pcl_ensemble::corpus::{DataSplit, SplitName};
use pcl_ensemble::models::{CnnConfig, Model, ModelConfig};
use pcl_ensemble::synthetic::separable_records;
use pcl_ensemble::text_prep::Vocabulary;
use pcl_ensemble::training::{predict_split, train, LrSchedule, ModelSource, TrainRunSpec};

fn main() -> pcl_ensemble::Result<()> {
    let train_split = DataSplit {
        name: SplitName::Train,
        records: separable_records(48, 1),
    };
    let dev = DataSplit {
        name: SplitName::Dev,
        records: separable_records(16, 2),
    };
    let vocab = Vocabulary::build(train_split.texts(), 1);
    let spec = TrainRunSpec {
        run_id: "cnn-toy".into(),
        model: ModelConfig::Cnn(CnnConfig {
            embedding_dim: 16,
            max_len: 32,
            ..Default::default()
        }),
        embedding: None,
        seed: 0,
        base_lr: 1e-2,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 10,
        batch_size: 8,
    };

    let dir = tempfile::tempdir().expect("tempdir");
    let source = ModelSource::Words {
        vocab: &vocab,
        pretrained: None,
    };
    let out = train(&spec, source, &train_split, &dev, dir.path())?;
    println!("epoch  loss     dev P   dev R   dev F1");
    for e in &out.record.per_epoch {
        println!(
            "{:5}  {:.5}  {:.3}   {:.3}   {:.3}",
            e.epoch, e.train_loss, e.dev_precision, e.dev_recall, e.dev_f1
        );
    }
    println!("best epoch {} with dev F1 {:.3}", out.record.best_epoch, out.record.best_dev_f1);

    let (model, info) = Model::load_checkpoint(&out.record.checkpoint)?;
    let again = predict_split(&model, &dev, "reloaded")?;
    println!("checkpoint epoch {}, {} dev predictions", info.epoch, again.len());
    Ok(())
}
