//! Fine-tune a miniature transformer bundle with a CLS head and stepwise LR decay.
//! The toy set is scored on itself, so dev F1 here is training fit.

use pcl_ensemble::corpus::{DataSplit, SplitName};
use pcl_ensemble::models::{EncoderBundle, EncoderConfig, ModelConfig, TransformerConfig};
use pcl_ensemble::synthetic::separable_records;
use pcl_ensemble::training::{train, LrSchedule, ModelSource, TrainRunSpec};

fn main() -> pcl_ensemble::Result<()> {
    let split = DataSplit {
        name: SplitName::Train,
        records: separable_records(32, 5),
    };
    let dev = DataSplit {
        name: SplitName::Dev,
        records: split.records.clone(),
    };
    let bundle = EncoderBundle::miniature("mini", split.texts(), EncoderConfig::miniature(200), 11)?;
    println!(
        "encoder: {} layers, hidden {}, {} subword types",
        bundle.config.layers,
        bundle.config.hidden,
        bundle.tokenizer.len()
    );
    let ids = bundle.tokenizer.encode("unfortunate poor souls", 16);
    let pieces: Vec<&str> = ids.iter().map(|&i| bundle.tokenizer.pieces()[i].as_str()).collect();
    println!("subwords: {pieces:?}");

    let spec = TrainRunSpec {
        run_id: "transformer-mini".into(),
        model: ModelConfig::Transformer(TransformerConfig {
            encoder_id: "mini".into(),
            max_tokens: 64,
        }),
        embedding: None,
        seed: 0,
        base_lr: 3e-3,
        lr_schedule: LrSchedule::Stepwise {
            step_size: 10,
            gamma: 0.5,
        },
        max_epochs: 20,
        batch_size: 4,
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let out = train(&spec, ModelSource::Encoder(&bundle), &split, &dev, dir.path())?;
    for e in out.record.per_epoch.iter().step_by(4) {
        println!(
            "epoch {:2}  lr {:.1e}  loss {:.4}  dev F1 {:.3}",
            e.epoch,
            spec.lr_schedule.lr(e.epoch, spec.base_lr),
            e.train_loss,
            e.dev_f1
        );
    }
    println!("best dev F1 {:.3} at epoch {}", out.record.best_dev_f1, out.record.best_epoch);
    Ok(())
}
