use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, dropout, expect_param, uniform, Classifier, Family};
use crate::autograd::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::text_prep::{encode, tokenize, EmbeddingTable, Vocabulary, DEFAULT_MAX_LEN, PAD};

/// Maximum filters per width accepted by validation.
pub const MAX_FILTERS_PER_WIDTH: usize = 300;

/// Kim-style sentence CNN. Activation is ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub max_len: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            filter_widths: vec![2, 3, 4],
            filters_per_width: 2,
            dropout: 0.5,
            embedding_dim: 300,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_widths.is_empty() {
            return Err(Error::config("cnn.filter_widths", "at least one width required"));
        }
        if self.max_len == 0 {
            return Err(Error::config("cnn.max_len", "must be at least 1"));
        }
        if let Some(w) = self
            .filter_widths
            .iter()
            .find(|&&w| w == 0 || w > self.max_len)
        {
            return Err(Error::config(
                "cnn.filter_widths",
                format!("width {w} must be in 1..={}", self.max_len),
            ));
        }
        if !(1..=MAX_FILTERS_PER_WIDTH).contains(&self.filters_per_width) {
            return Err(Error::config(
                "cnn.filters_per_width",
                format!("must be in 1..={MAX_FILTERS_PER_WIDTH}"),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("cnn.dropout", "must be in [0, 1)"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("cnn.embedding_dim", "must be at least 1"));
        }
        Ok(())
    }

    /// Width of the pooled feature vector fed to the output layer.
    pub fn pooled_features(&self) -> usize {
        self.filter_widths.len() * self.filters_per_width
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    config: CnnConfig,
    vocab: Vocabulary,
    params: ParamSet,
    embedding: ParamId,
    convs: Vec<(usize, ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

impl CnnModel {
    pub fn new(
        config: CnnConfig,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.vocab_size() != vocab.len() || embeddings.dim() != config.embedding_dim {
            return Err(Error::Validation(format!(
                "embedding table is {}x{}, expected {}x{}",
                embeddings.vocab_size(),
                embeddings.dim(),
                vocab.len(),
                config.embedding_dim
            )));
        }
        let d = config.embedding_dim;
        let f = config.filters_per_width;
        let mut params = ParamSet::new();
        params.add("embedding", embeddings.matrix);
        for &w in &config.filter_widths {
            let bound = 1.0 / ((w * d) as f64).sqrt();
            params.add(format!("conv{w}.weight"), uniform(rng, (w * d, f), bound));
            params.add(format!("conv{w}.bias"), uniform(rng, (1, f), bound));
        }
        let n = config.pooled_features();
        let bound = 1.0 / (n as f64).sqrt();
        params.add("output.weight", uniform(rng, (n, 2), bound));
        params.add("output.bias", uniform(rng, (1, 2), bound));
        Self::from_parts(config, vocab, params)
    }

    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: CnnConfig, vocab: Vocabulary, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        let f = config.filters_per_width;
        let embedding = expect_param(&params, "embedding", (vocab.len(), d))?;
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| {
                Ok((
                    w,
                    expect_param(&params, &format!("conv{w}.weight"), (w * d, f))?,
                    expect_param(&params, &format!("conv{w}.bias"), (1, f))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = config.pooled_features();
        let out_w = expect_param(&params, "output.weight", (n, 2))?;
        let out_b = expect_param(&params, "output.bias", (1, 2))?;
        if params.len() != 3 + 2 * convs.len() {
            return Err(Error::Validation("unexpected extra CNN parameters".into()));
        }
        Ok(Self {
            config,
            vocab,
            params,
            embedding,
            convs,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl Classifier for CnnModel {
    fn family(&self) -> Family {
        Family::Cnn
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn prepare(&self, text: &str) -> Vec<usize> {
        encode(&tokenize(text), &self.vocab, self.config.max_len)
    }

    fn logits(&self, g: &mut Graph, input: &[usize], rng: Option<&mut ChaCha8Rng>) -> Var {
        let widest = self.convs.iter().map(|c| c.0).max().unwrap_or(1);
        let mut ids = input.to_vec();
        if ids.len() < widest {
            ids.resize(widest, PAD);
        }
        let table = g.param(self.embedding);
        let x = g.gather(table, &ids, Some(PAD));
        let pooled: Vec<Var> = self
            .convs
            .iter()
            .map(|&(w, weight, bias)| {
                let windows = g.unfold(x, w);
                let h = affine(g, windows, weight, bias);
                let h = g.relu(h);
                g.max_rows(h)
            })
            .collect();
        let features = g.concat_cols(&pooled);
        let features = dropout(g, features, self.config.dropout, rng);
        affine(g, features, self.out_w, self.out_b)
    }
}
