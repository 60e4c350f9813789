#![allow(dead_code)]

use std::path::Path;

use pcl_ensemble::corpus::{DataSplit, SplitName};
use pcl_ensemble::models::{BilstmConfig, CnnConfig, EncoderBundle, EncoderConfig, ModelConfig, TransformerConfig};
use pcl_ensemble::synthetic::separable_records;
use pcl_ensemble::text_prep::Vocabulary;
use pcl_ensemble::training::{train, LrSchedule, ModelSource, TrainOutcome, TrainRunSpec};

pub fn toy_split(name: SplitName, n: usize, seed: u64) -> DataSplit {
    DataSplit {
        name,
        records: separable_records(n, seed),
    }
}

pub fn toy_vocab(split: &DataSplit) -> Vocabulary {
    Vocabulary::build(split.records.iter().map(|r| r.text.as_str()), 1)
}

pub fn toy_encoder(split: &DataSplit) -> EncoderBundle {
    EncoderBundle::miniature(
        "mini",
        split.records.iter().map(|r| r.text.as_str()),
        EncoderConfig::miniature(200),
        11,
    )
    .unwrap()
}

pub fn cnn_spec(seed: u64) -> TrainRunSpec {
    TrainRunSpec {
        run_id: format!("cnn-toy-s{seed}"),
        model: ModelConfig::Cnn(CnnConfig {
            embedding_dim: 16,
            max_len: 32,
            ..Default::default()
        }),
        embedding: None,
        seed,
        base_lr: 1e-2,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 35,
        batch_size: 4,
    }
}

pub fn bilstm_spec(seed: u64) -> TrainRunSpec {
    TrainRunSpec {
        run_id: format!("bilstm-toy-s{seed}"),
        model: ModelConfig::Bilstm(BilstmConfig {
            hidden_size: 8,
            embedding_dim: 16,
            max_len: 32,
            ..Default::default()
        }),
        embedding: None,
        seed,
        base_lr: 1e-2,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 35,
        batch_size: 4,
    }
}

pub fn transformer_spec(seed: u64) -> TrainRunSpec {
    TrainRunSpec {
        run_id: format!("transformer-toy-s{seed}"),
        model: ModelConfig::Transformer(TransformerConfig {
            encoder_id: "mini".into(),
            max_tokens: 64,
        }),
        embedding: None,
        seed,
        base_lr: 3e-3,
        lr_schedule: LrSchedule::Stepwise { step_size: 10, gamma: 0.5 },
        max_epochs: 20,
        batch_size: 4,
    }
}

/// Trains on the 32-example toy set, using it as the dev split as well.
pub fn overfit(spec: &TrainRunSpec, dir: &Path) -> TrainOutcome {
    let split = toy_split(SplitName::Train, 32, 5);
    let dev = DataSplit {
        name: SplitName::Dev,
        records: split.records.clone(),
    };
    match spec.family() {
        pcl_ensemble::models::Family::Transformer => {
            let bundle = toy_encoder(&split);
            train(spec, ModelSource::Encoder(&bundle), &split, &dev, dir).unwrap()
        }
        _ => {
            let vocab = toy_vocab(&split);
            let source = ModelSource::Words {
                vocab: &vocab,
                pretrained: None,
            };
            train(spec, source, &split, &dev, dir).unwrap()
        }
    }
}

use pcl_ensemble::autograd::Graph;
use pcl_ensemble::models::{BilstmModel, Classifier, CnnModel, TransformerClassifier};
use pcl_ensemble::text_prep::{EmbeddingTable, PAD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `<pad>`, `<unk>` and `w2..w{v-1}`.
pub fn tiny_vocab(v: usize) -> Vocabulary {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((2..v).map(|i| format!("w{i}")));
    Vocabulary::from_tokens(tokens).unwrap()
}

pub fn tiny_cnn(v: usize, d: usize, filters: usize, seed: u64) -> CnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = CnnConfig {
        filter_widths: vec![2, 3],
        filters_per_width: filters,
        dropout: 0.0,
        embedding_dim: d,
        max_len: 16,
    };
    let table = EmbeddingTable::random(v, d, &mut rng);
    CnnModel::new(config, tiny_vocab(v), table, &mut rng).unwrap()
}

pub fn tiny_bilstm(v: usize, d: usize, h: usize, seed: u64) -> BilstmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = BilstmConfig {
        hidden_size: h,
        dropout: 0.0,
        embedding_dim: d,
        max_len: 16,
    };
    let table = EmbeddingTable::random(v, d, &mut rng);
    BilstmModel::new(config, tiny_vocab(v), table, &mut rng).unwrap()
}

pub fn tiny_transformer(seed: u64) -> TransformerClassifier {
    let texts = ["the poor souls need help", "officials said homes were given"];
    let mut cfg = EncoderConfig::miniature(60);
    cfg.hidden = 8;
    cfg.intermediate = 12;
    cfg.max_positions = 16;
    cfg.dropout = 0.0;
    let bundle = EncoderBundle::miniature("tiny", texts, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    TransformerClassifier::from_bundle(
        bundle,
        TransformerConfig {
            encoder_id: "tiny".into(),
            max_tokens: 16,
        },
        &mut rng,
    )
    .unwrap()
}

pub fn loss_of(model: &dyn Classifier, inputs: &[&[usize]], labels: &[usize]) -> f64 {
    let mut g = Graph::new(model.params());
    let out = model.batch_loss(&mut g, inputs, labels, None);
    g.value(out)[[0, 0]]
}

/// Largest relative error between backprop and central differences over every
/// parameter entry (PAD embedding rows excluded). Entries where both
/// magnitudes are below `floor` count as agreeing.
pub fn gradient_check(
    model: &mut dyn Classifier,
    inputs: &[&[usize]],
    labels: &[usize],
    step: f64,
    floor: f64,
) -> f64 {
    let mut grads = model.params().zero_grads();
    {
        let mut g = Graph::new(model.params());
        let out = model.batch_loss(&mut g, inputs, labels, None);
        g.backward(out, &mut grads);
    }
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let name = model.params().name(id).to_string();
        let shape = model.params().get(id).dim();
        for r in 0..shape.0 {
            if name == "embedding" && r == PAD {
                continue;
            }
            for c in 0..shape.1 {
                let orig = model.params().get(id)[[r, c]];
                model.params_mut().get_mut(id)[[r, c]] = orig + step;
                let plus = loss_of(model, inputs, labels);
                model.params_mut().get_mut(id)[[r, c]] = orig - step;
                let minus = loss_of(model, inputs, labels);
                model.params_mut().get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = grads.get(id)[[r, c]];
                let scale = analytic.abs().max(numeric.abs());
                if scale >= floor {
                    worst = worst.max((analytic - numeric).abs() / scale);
                }
            }
        }
    }
    worst
}

use std::collections::HashMap;

use pcl_ensemble::ensemble::PredictionSet;
use pcl_ensemble::training::TrainedModelRecord;

/// Registry entry with no artefacts on disk, for selection and sweep tests.
pub fn fake_record(run_id: &str, family: pcl_ensemble::models::Family, f1: f64) -> TrainedModelRecord {
    let mut spec = match family {
        pcl_ensemble::models::Family::Cnn => cnn_spec(0),
        pcl_ensemble::models::Family::Bilstm => bilstm_spec(0),
        pcl_ensemble::models::Family::Transformer => transformer_spec(0),
    };
    spec.run_id = run_id.to_string();
    TrainedModelRecord {
        run_id: run_id.to_string(),
        spec,
        parameter_count: 0,
        per_epoch: vec![],
        best_epoch: 1,
        best_dev_f1: f1,
        checkpoint: "unused.ckpt".into(),
        dev_predictions: "unused.tsv".into(),
    }
}

/// Ten runs on a 40-paragraph dev set: the best run is perfect, the other
/// nine invert the labels, so adding members eventually hurts.
pub fn sweep_fixture() -> (Vec<TrainedModelRecord>, HashMap<String, PredictionSet>, HashMap<String, u8>) {
    let ids: Vec<String> = (1..=40).map(|i| i.to_string()).collect();
    let labels: HashMap<String, u8> = ids.iter().map(|id| (id.clone(), u8::from(id.len() % 2 == 0 || id.ends_with('7')))).collect();
    let mut registry = Vec::new();
    let mut preds = HashMap::new();
    for k in 0..10 {
        let run_id = format!("run{k:02}");
        registry.push(fake_record(&run_id, pcl_ensemble::models::Family::Cnn, 1.0 - k as f64 * 0.05));
        let entries = ids
            .iter()
            .map(|id| {
                let pos = labels[id] == 1;
                let p = if (k == 0) == pos { 0.9 } else { 0.02 * (k as f64) };
                (id.clone(), p)
            })
            .collect();
        preds.insert(run_id.clone(), PredictionSet::new(run_id, SplitName::Dev, entries).unwrap());
    }
    (registry, preds, labels)
}
