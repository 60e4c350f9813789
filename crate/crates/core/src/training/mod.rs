//! Training runs: seeding, the epoch loop with best-epoch checkpointing,
//! grid expansion and the run registry.

mod grid;
mod optim;
mod registry;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_bytes, DataSplit, SplitName};
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::models::{
    count_parameters, BilstmModel, CnnModel, EncoderBundle, Family, Model, ModelConfig,
    TransformerClassifier,
};
use crate::text_prep::{EmbeddingTable, PretrainedRows, Vocabulary};

pub use grid::{expand_grid, GridConfig, TransformerGrid, WordGrid, DEFAULT_EMBEDDINGS};
pub use optim::{stepwise_lr, Adam};
pub use registry::Registry;

/// Threshold used for dev F1 during model selection.
pub const SELECTION_THRESHOLD: f64 = 0.5;

pub const SPEC_FILE: &str = "spec.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DEV_PREDICTIONS_FILE: &str = "pred_dev.tsv";
pub const TEST_PREDICTIONS_FILE: &str = "pred_test.tsv";

/// Independent random streams derived from one seed.
#[derive(Debug, Clone)]
pub struct SeededStreams {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub oov: ChaCha8Rng,
}

/// Seeds every stochastic source of a run.
pub fn set_seed(seed: u64) -> SeededStreams {
    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    SeededStreams {
        init: stream(1),
        shuffle: stream(2),
        dropout: stream(3),
        oov: stream(4),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    Stepwise { step_size: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize, base_lr: f64) -> f64 {
        match *self {
            LrSchedule::Constant => base_lr,
            LrSchedule::Stepwise { step_size, gamma } => stepwise_lr(epoch, base_lr, step_size, gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunSpec {
    pub run_id: String,
    pub model: ModelConfig,
    /// Pretrained table alias for CNN/BiLSTM runs; `None` means random init.
    #[serde(default)]
    pub embedding: Option<String>,
    pub seed: u64,
    pub base_lr: f64,
    pub lr_schedule: LrSchedule,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl TrainRunSpec {
    pub fn family(&self) -> Family {
        self.model.family()
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("{}.{k}", self.run_id);
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::config("run_id", format!("{:?} is not a usable run id", self.run_id)));
        }
        if self.max_epochs == 0 {
            return Err(Error::config(key("max_epochs"), "at least one epoch is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be at least 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config(key("base_lr"), "must be a positive number"));
        }
        if let LrSchedule::Stepwise { step_size, gamma } = self.lr_schedule {
            if step_size == 0 {
                return Err(Error::config(key("lr_schedule.step_size"), "must be at least 1"));
            }
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::config(key("lr_schedule.gamma"), "must be in (0, 1]"));
            }
        }
        match &self.model {
            ModelConfig::Cnn(c) => c.validate(),
            ModelConfig::Bilstm(c) => c.validate(),
            ModelConfig::Transformer(c) => {
                if self.embedding.is_some() {
                    return Err(Error::config(key("embedding"), "transformer runs take no word embeddings"));
                }
                if c.max_tokens < 2 {
                    return Err(Error::config(key("max_tokens"), "must be at least 2"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

/// Summary of one finished run; one registry line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModelRecord {
    pub run_id: String,
    pub spec: TrainRunSpec,
    pub parameter_count: usize,
    pub per_epoch: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub checkpoint: PathBuf,
    pub dev_predictions: PathBuf,
}

impl TrainedModelRecord {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    pub fn load_dev_predictions(&self) -> Result<PredictionSet> {
        PredictionSet::read_tsv(&self.dev_predictions, &self.run_id, SplitName::Dev)
    }

    pub fn load_model(&self) -> Result<Model> {
        Ok(Model::load_checkpoint(&self.checkpoint)?.0)
    }
}

/// What a new model is initialised from.
#[derive(Debug, Clone, Copy)]
pub enum ModelSource<'a> {
    /// Vocabulary plus optional pretrained rows (CNN/BiLSTM).
    Words {
        vocab: &'a Vocabulary,
        pretrained: Option<&'a PretrainedRows>,
    },
    /// Pretrained encoder weights (transformer).
    Encoder(&'a EncoderBundle),
}

/// Initialises a model for `spec`, drawing from the init and OOV streams.
pub fn build_model(spec: &TrainRunSpec, source: ModelSource<'_>, streams: &mut SeededStreams) -> Result<Model> {
    let words = |dim: usize, streams: &mut SeededStreams| match source {
        ModelSource::Words { vocab, pretrained } => {
            let table = match pretrained {
                Some(rows) => {
                    if rows.dim() != dim || rows.vocab_size() != vocab.len() {
                        return Err(Error::config(
                            format!("{}.embedding_dim", spec.run_id),
                            format!(
                                "pretrained table is {}x{}, model expects {}x{dim}",
                                rows.vocab_size(),
                                rows.dim(),
                                vocab.len()
                            ),
                        ));
                    }
                    rows.materialize(&mut streams.oov)
                }
                None => EmbeddingTable::random(vocab.len(), dim, &mut streams.oov),
            };
            Ok((vocab.clone(), table))
        }
        ModelSource::Encoder(_) => Err(Error::config(
            spec.run_id.as_str(),
            format!("{} runs need a vocabulary, not an encoder", spec.family()),
        )),
    };
    Ok(match &spec.model {
        ModelConfig::Cnn(c) => {
            let (vocab, table) = words(c.embedding_dim, streams)?;
            Model::Cnn(CnnModel::new(c.clone(), vocab, table, &mut streams.init)?)
        }
        ModelConfig::Bilstm(c) => {
            let (vocab, table) = words(c.embedding_dim, streams)?;
            Model::Bilstm(BilstmModel::new(c.clone(), vocab, table, &mut streams.init)?)
        }
        ModelConfig::Transformer(c) => {
            let ModelSource::Encoder(bundle) = source else {
                return Err(Error::config(spec.run_id.as_str(), "transformer runs need an encoder bundle"));
            };
            if c.max_tokens > bundle.config.max_positions {
                return Err(Error::config(
                    format!("{}.max_tokens", spec.run_id),
                    format!("{} exceeds the encoder's {} positions", c.max_tokens, bundle.config.max_positions),
                ));
            }
            Model::Transformer(TransformerClassifier::from_bundle(bundle.clone(), c.clone(), &mut streams.init)?)
        }
    })
}

/// Result of [`train`]: the registry record and the best-epoch model.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: TrainedModelRecord,
    pub model: Model,
}

/// Positive-class probabilities of `model` on every record of `split`.
pub fn predict_split(model: &Model, split: &DataSplit, source_id: &str) -> Result<PredictionSet> {
    let classifier = model.as_classifier();
    let inputs: Vec<Vec<usize>> = split.records.iter().map(|r| classifier.prepare(&r.text)).collect();
    let probs = classifier.predict_prepared(&inputs)?;
    PredictionSet::new(
        source_id,
        split.name,
        split.ids().map(str::to_string).zip(probs.iter().map(|p| p.positive())).collect(),
    )
}

fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,dev_precision,dev_recall,dev_f1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.dev_precision, r.dev_recall, r.dev_f1
        );
    }
    out
}

/// Trains one run for exactly `max_epochs` epochs, writing the run directory
/// (`spec.json`, `metrics.csv`, `model.ckpt`, `pred_dev.tsv`).
///
/// The checkpoint is replaced only when dev F1 strictly improves.
pub fn train(
    spec: &TrainRunSpec,
    source: ModelSource<'_>,
    train_split: &DataSplit,
    dev_split: &DataSplit,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if train_split.is_empty() {
        return Err(Error::config("splits.train", "training split is empty"));
    }
    if dev_split.is_empty() {
        return Err(Error::config("splits.dev", "development split is empty"));
    }
    let train_labels: Vec<usize> = train_split.label_vec()?.into_iter().map(usize::from).collect();
    let dev_labels = dev_split.label_vec()?;

    let mut streams = set_seed(spec.seed);
    let mut model = build_model(spec, source, &mut streams)?;
    let parameter_count = count_parameters(model.as_classifier());
    info!(
        "{}: training {} ({} parameters) on {} examples",
        spec.run_id,
        spec.family(),
        parameter_count,
        train_split.len()
    );

    let spec_json = serde_json::to_string_pretty(spec)? + "\n";
    write_bytes(&run_dir.join(SPEC_FILE), spec_json.as_bytes())?;
    let checkpoint = run_dir.join(CHECKPOINT_FILE);

    let prepare = |m: &Model, split: &DataSplit| -> Vec<Vec<usize>> {
        let c = m.as_classifier();
        split.records.iter().map(|r| c.prepare(&r.text)).collect()
    };
    let train_inputs = prepare(&model, train_split);
    let dev_inputs = prepare(&model, dev_split);

    let mut adam = Adam::new(model.as_classifier().params());
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut per_epoch = Vec::with_capacity(spec.max_epochs);
    let mut best: Option<(usize, f64, Vec<f64>, Model)> = None;

    for epoch in 1..=spec.max_epochs {
        let lr = spec.lr_schedule.lr(epoch, spec.base_lr);
        order.shuffle(&mut streams.shuffle);
        let mut loss_sum = 0.0;
        for (batch_index, batch) in order.chunks(spec.batch_size).enumerate() {
            let inputs: Vec<&[usize]> = batch.iter().map(|&i| train_inputs[i].as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let classifier = model.as_classifier_mut();
            let mut grads = classifier.params().zero_grads();
            let loss = {
                let mut g = crate::autograd::Graph::new(classifier.params());
                let out = classifier.batch_loss(&mut g, &inputs, &labels, Some(&mut streams.dropout));
                let loss = g.value(out)[[0, 0]];
                if loss.is_finite() {
                    g.backward(out, &mut grads);
                }
                loss
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "{}: non-finite loss at epoch {epoch}, batch {batch_index}",
                    spec.run_id
                )));
            }
            adam.step(classifier.params_mut(), &grads, lr);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_inputs.len() as f64;

        let probs: Vec<f64> = model
            .as_classifier()
            .predict_prepared(&dev_inputs)?
            .iter()
            .map(|p| p.positive())
            .collect();
        let preds: Vec<u8> = probs.iter().map(|p| u8::from(*p >= SELECTION_THRESHOLD)).collect();
        let m = MetricsReport::from_aligned(&preds, &dev_labels);
        debug!(
            "{} epoch {epoch}: lr {lr:e} loss {train_loss:.5} dev P {:.4} R {:.4} F1 {:.4}",
            spec.run_id, m.precision, m.recall, m.f1
        );
        per_epoch.push(EpochMetrics {
            epoch,
            train_loss,
            dev_precision: m.precision,
            dev_recall: m.recall,
            dev_f1: m.f1,
        });
        if best.as_ref().is_none_or(|b| m.f1 > b.1) {
            model.save_checkpoint(&checkpoint, epoch, m.f1)?;
            best = Some((epoch, m.f1, probs, model.clone()));
        }
        write_bytes(&run_dir.join(METRICS_FILE), metrics_csv(&per_epoch).as_bytes())?;
    }

    let (best_epoch, best_dev_f1, best_probs, best_model) = best.expect("at least one epoch ran");
    let dev_predictions = run_dir.join(DEV_PREDICTIONS_FILE);
    let dev_set = PredictionSet::new(
        spec.run_id.as_str(),
        SplitName::Dev,
        dev_split.ids().map(str::to_string).zip(best_probs).collect(),
    )?;
    dev_set.write_tsv(&dev_predictions)?;
    info!("{}: best epoch {best_epoch}, dev F1 {best_dev_f1:.4}", spec.run_id);

    Ok(TrainOutcome {
        record: TrainedModelRecord {
            run_id: spec.run_id.clone(),
            spec: spec.clone(),
            parameter_count,
            per_epoch,
            best_epoch,
            best_dev_f1,
            checkpoint,
            dev_predictions,
        },
        model: best_model,
    })
}
