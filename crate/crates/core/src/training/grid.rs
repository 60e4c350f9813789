use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{LrSchedule, TrainRunSpec};
use crate::error::{Error, Result};
use crate::models::{BilstmConfig, CnnConfig, ModelConfig, TransformerConfig};

/// Aliases of the four pretrained word-embedding tables.
pub const DEFAULT_EMBEDDINGS: [&str; 4] = ["google_news", "glove_word", "glove_twitter", "fasttext_crawl"];

/// CNN or BiLSTM sweep: every (embedding, learning rate, seed) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordGrid<C> {
    pub embeddings: Vec<String>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub model: C,
}

impl<C: Default> Default for WordGrid<C> {
    fn default() -> Self {
        Self {
            embeddings: DEFAULT_EMBEDDINGS.iter().map(|s| s.to_string()).collect(),
            learning_rates: vec![1e-3],
            seeds: vec![0, 1, 2],
            max_epochs: 35,
            batch_size: 32,
            model: C::default(),
        }
    }
}

/// Transformer sweep: every (step size, learning rate, seed) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerGrid {
    pub encoder_id: String,
    pub max_tokens: usize,
    pub step_sizes: Vec<usize>,
    pub gamma: f64,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl Default for TransformerGrid {
    fn default() -> Self {
        Self {
            encoder_id: "roberta-base".into(),
            max_tokens: 512,
            step_sizes: vec![2, 3],
            gamma: 0.5,
            learning_rates: vec![2e-5],
            seeds: (0..11).collect(),
            max_epochs: 20,
            batch_size: 8,
        }
    }
}

/// Per-family grids; an absent family contributes no runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cnn: Option<WordGrid<CnnConfig>>,
    pub bilstm: Option<WordGrid<BilstmConfig>>,
    pub transformer: Option<TransformerGrid>,
}

impl GridConfig {
    /// 12 CNN + 12 BiLSTM + 22 transformer runs.
    pub fn standard() -> Self {
        Self {
            cnn: Some(WordGrid::default()),
            bilstm: Some(WordGrid::default()),
            transformer: Some(TransformerGrid::default()),
        }
    }
}

fn lr_tag(lr: f64) -> String {
    format!("{lr:e}")
}

fn word_specs<C: Clone>(
    family: &str,
    grid: &WordGrid<C>,
    wrap: impl Fn(C) -> ModelConfig,
    extra: impl Fn(&C) -> String,
) -> Vec<TrainRunSpec> {
    let mut out = Vec::new();
    for emb in &grid.embeddings {
        for &lr in &grid.learning_rates {
            for &seed in &grid.seeds {
                out.push(TrainRunSpec {
                    run_id: format!("{family}-{emb}{}-lr{}-s{seed}", extra(&grid.model), lr_tag(lr)),
                    model: wrap(grid.model.clone()),
                    embedding: Some(emb.clone()),
                    seed,
                    base_lr: lr,
                    lr_schedule: LrSchedule::Constant,
                    max_epochs: grid.max_epochs,
                    batch_size: grid.batch_size,
                });
            }
        }
    }
    out
}

/// Enumerates run specs in a fixed order: CNN, BiLSTM, transformer.
pub fn expand_grid(config: &GridConfig) -> Result<Vec<TrainRunSpec>> {
    let mut specs = Vec::new();
    if let Some(g) = &config.cnn {
        specs.extend(word_specs("cnn", g, ModelConfig::Cnn, |_| String::new()));
    }
    if let Some(g) = &config.bilstm {
        specs.extend(word_specs("bilstm", g, ModelConfig::Bilstm, |c| format!("-h{}", c.hidden_size)));
    }
    if let Some(g) = &config.transformer {
        for &step_size in &g.step_sizes {
            for &lr in &g.learning_rates {
                for &seed in &g.seeds {
                    specs.push(TrainRunSpec {
                        run_id: format!("transformer-step{step_size}-lr{}-s{seed}", lr_tag(lr)),
                        model: ModelConfig::Transformer(TransformerConfig {
                            encoder_id: g.encoder_id.clone(),
                            max_tokens: g.max_tokens,
                        }),
                        embedding: None,
                        seed,
                        base_lr: lr,
                        lr_schedule: LrSchedule::Stepwise { step_size, gamma: g.gamma },
                        max_epochs: g.max_epochs,
                        batch_size: g.batch_size,
                    });
                }
            }
        }
    }
    let mut seen = HashSet::new();
    for s in &specs {
        if !seen.insert(s.run_id.as_str()) {
            return Err(Error::config("grid", format!("duplicate run_id {}", s.run_id)));
        }
        s.validate()?;
    }
    Ok(specs)
}
