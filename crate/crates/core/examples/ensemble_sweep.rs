//! Rank a registry by dev F1 and score top-n averages for growing n.

use std::collections::HashMap;

use pcl_ensemble::corpus::SplitName;
use pcl_ensemble::ensemble::{ensemble_sweep, select_top_n, write_sweep, PredictionSet, SweepOptions};
use pcl_ensemble::models::{CnnConfig, ModelConfig};
use pcl_ensemble::training::{LrSchedule, TrainRunSpec, TrainedModelRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(run_id: &str, f1: f64) -> TrainedModelRecord {
    TrainedModelRecord {
        run_id: run_id.into(),
        spec: TrainRunSpec {
            run_id: run_id.into(),
            model: ModelConfig::Cnn(CnnConfig::default()),
            embedding: Some("glove_word".into()),
            seed: 0,
            base_lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            max_epochs: 35,
            batch_size: 32,
        },
        parameter_count: 0,
        per_epoch: vec![],
        best_epoch: 1,
        best_dev_f1: f1,
        checkpoint: "model.ckpt".into(),
        dev_predictions: "pred_dev.tsv".into(),
    }
}

fn main() -> pcl_ensemble::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: HashMap<String, u8> = (1..=200).map(|i| (i.to_string(), u8::from(i % 9 == 0))).collect();
    let mut registry = Vec::new();
    let mut predictions = HashMap::new();
    for k in 0..12 {
        let run_id = format!("run{k:02}");
        let noise = 0.3 + 0.05 * k as f64;
        let entries = labels
            .iter()
            .map(|(id, y)| {
                let p = 0.3 + 0.4 * f64::from(*y) + rng.random_range(-noise..noise);
                (id.clone(), p.clamp(0.0, 1.0))
            })
            .collect();
        predictions.insert(run_id.clone(), PredictionSet::new(&run_id, SplitName::Dev, entries)?);
        registry.push(record(&run_id, 0.9 - 0.02 * k as f64));
    }

    println!("top 3: {:?}", select_top_n(&registry, 3, None)?.members);
    let points = ensemble_sweep(&registry, &predictions, 12, &labels, &SweepOptions::default())?;
    for p in &points {
        println!("n={:2}  threshold {:.2}  F1 {:.3}", p.n, p.threshold, p.f1);
    }
    let dir = tempfile::tempdir().expect("tempdir");
    write_sweep(&points, &dir.path().join("sweep.csv"), &dir.path().join("sweep.svg"))?;
    Ok(())
}
