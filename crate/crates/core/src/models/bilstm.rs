use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, dropout, expect_param, uniform, Classifier, Family};
use crate::autograd::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::text_prep::{
    encode, encoded_len, tokenize, EmbeddingTable, Vocabulary, DEFAULT_MAX_LEN, PAD,
};

/// Hidden sizes explored in the experiment grid.
pub const BILSTM_HIDDEN_SIZES: [usize; 3] = [128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilstmConfig {
    pub hidden_size: usize,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub max_len: usize,
}

impl Default for BilstmConfig {
    fn default() -> Self {
        Self {
            hidden_size: 256,
            dropout: 0.0,
            embedding_dim: 300,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl BilstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::config("bilstm.hidden_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("bilstm.dropout", "must be in [0, 1)"));
        }
        if self.embedding_dim == 0 || self.max_len == 0 {
            return Err(Error::config(
                "bilstm",
                "embedding_dim and max_len must be at least 1",
            ));
        }
        Ok(())
    }
}

/// One direction of the LSTM. Gate column blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
struct Direction {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Bidirectional LSTM over the unpadded prefix of the input; the final
/// forward state and the final backward state (at position 0) are
/// concatenated and mapped to logits.
#[derive(Debug, Clone)]
pub struct BilstmModel {
    config: BilstmConfig,
    vocab: Vocabulary,
    params: ParamSet,
    embedding: ParamId,
    forward: Direction,
    backward: Direction,
    out_w: ParamId,
    out_b: ParamId,
}

impl BilstmModel {
    pub fn new(
        config: BilstmConfig,
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
        let (d, h) = (config.embedding_dim, config.hidden_size);
        let bound = 1.0 / (h as f64).sqrt();
        let mut params = ParamSet::new();
        params.add("embedding", embeddings.matrix);
        for dir in ["forward", "backward"] {
            params.add(format!("lstm.{dir}.w_ih"), uniform(rng, (d, 4 * h), bound));
            params.add(format!("lstm.{dir}.w_hh"), uniform(rng, (h, 4 * h), bound));
            params.add(format!("lstm.{dir}.bias"), uniform(rng, (1, 4 * h), bound));
        }
        let bound = 1.0 / ((2 * h) as f64).sqrt();
        params.add("output.weight", uniform(rng, (2 * h, 2), bound));
        params.add("output.bias", uniform(rng, (1, 2), bound));
        Self::from_parts(config, vocab, params)
    }

    pub fn from_parts(config: BilstmConfig, vocab: Vocabulary, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.embedding_dim, config.hidden_size);
        let direction = |dir: &str| -> Result<Direction> {
            Ok(Direction {
                w_ih: expect_param(&params, &format!("lstm.{dir}.w_ih"), (d, 4 * h))?,
                w_hh: expect_param(&params, &format!("lstm.{dir}.w_hh"), (h, 4 * h))?,
                bias: expect_param(&params, &format!("lstm.{dir}.bias"), (1, 4 * h))?,
            })
        };
        let forward = direction("forward")?;
        let backward = direction("backward")?;
        let embedding = expect_param(&params, "embedding", (vocab.len(), d))?;
        let out_w = expect_param(&params, "output.weight", (2 * h, 2))?;
        let out_b = expect_param(&params, "output.bias", (1, 2))?;
        if params.len() != 9 {
            return Err(Error::Validation("unexpected extra BiLSTM parameters".into()));
        }
        Ok(Self {
            config,
            vocab,
            params,
            embedding,
            forward,
            backward,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &BilstmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn run(&self, g: &mut Graph, ids: &[usize], dir: Direction, reverse: bool) -> Var {
        let hsz = self.config.hidden_size;
        let mut h = g.constant(Tensor::zeros((1, hsz)));
        let mut c = g.constant(Tensor::zeros((1, hsz)));
        let table = g.param(self.embedding);
        let w_ih = g.param(dir.w_ih);
        let w_hh = g.param(dir.w_hh);
        let bias = g.param(dir.bias);
        let order: Box<dyn Iterator<Item = &usize>> = if reverse {
            Box::new(ids.iter().rev())
        } else {
            Box::new(ids.iter())
        };
        for &id in order {
            let x = g.gather(table, &[id], Some(PAD));
            let xw = g.matmul(x, w_ih);
            let hw = g.matmul(h, w_hh);
            let gates = g.add(xw, hw);
            let gates = g.add_row(gates, bias);
            let i = g.slice_cols(gates, 0, hsz);
            let i = g.sigmoid(i);
            let f = g.slice_cols(gates, hsz, 2 * hsz);
            let f = g.sigmoid(f);
            let cand = g.slice_cols(gates, 2 * hsz, 3 * hsz);
            let cand = g.tanh(cand);
            let o = g.slice_cols(gates, 3 * hsz, 4 * hsz);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        h
    }
}

impl Classifier for BilstmModel {
    fn family(&self) -> Family {
        Family::Bilstm
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
        let ids = &input[..encoded_len(input)];
        let fwd = self.run(g, ids, self.forward, false);
        let bwd = self.run(g, ids, self.backward, true);
        let features = g.concat_cols(&[fwd, bwd]);
        let features = dropout(g, features, self.config.dropout, rng);
        affine(g, features, self.out_w, self.out_b)
    }
}
