//! The three classifier families. Each maps one paragraph to a 2-class
//! probability vector `[p(Not PCL), p(PCL)]`.

mod bilstm;
mod checkpoint;
mod cnn;
mod subword;
mod transformer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_in_place, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub use bilstm::{BilstmConfig, BilstmModel, BILSTM_HIDDEN_SIZES};
pub use checkpoint::{read_archive, write_archive, CheckpointInfo};
pub use cnn::{CnnConfig, CnnModel};
pub use subword::{SubwordTokenizer, BOS_TOKEN, EOS_TOKEN};
pub use transformer::{
    EncoderBundle, EncoderConfig, TransformerClassifier, TransformerConfig, ENCODER_CACHE_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cnn,
    Bilstm,
    Transformer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Cnn, Family::Bilstm, Family::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Bilstm => "bilstm",
            Family::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Family::Cnn),
            "bilstm" => Ok(Family::Bilstm),
            "transformer" => Ok(Family::Transformer),
            other => Err(Error::Validation(format!("unknown model family {other:?}"))),
        }
    }
}

/// `[p(Not PCL), p(PCL)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbabilities(pub [f64; 2]);

impl ClassProbabilities {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let mut p = logits;
        softmax_in_place(&mut p);
        Self(p)
    }

    pub fn positive(&self) -> f64 {
        self.0[1]
    }

    pub fn negative(&self) -> f64 {
        self.0[0]
    }
}

/// Shared behaviour of the classifier families.
pub trait Classifier: Sync {
    fn family(&self) -> Family;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Converts raw text to the model's input index sequence.
    fn prepare(&self, text: &str) -> Vec<usize>;

    /// Builds the `1 x 2` logits for one prepared input. Dropout is applied
    /// only when an RNG is supplied.
    fn logits(&self, g: &mut Graph, input: &[usize], dropout: Option<&mut ChaCha8Rng>) -> Var;

    /// Class probabilities for prepared inputs, in evaluation mode.
    fn predict_prepared(&self, inputs: &[Vec<usize>]) -> Result<Vec<ClassProbabilities>> {
        inputs
            .par_iter()
            .map(|input| {
                let mut g = Graph::new(self.params());
                let l = self.logits(&mut g, input, None);
                let v = g.value(l);
                let logits = [v[[0, 0]], v[[0, 1]]];
                if !logits.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "{} produced non-finite logits {logits:?}",
                        self.family()
                    )));
                }
                Ok(ClassProbabilities::from_logits(logits))
            })
            .collect()
    }

    fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
        let inputs: Vec<_> = texts.iter().map(|t| self.prepare(t)).collect();
        self.predict_prepared(&inputs)
    }

    /// Mean cross-entropy of a batch, as a `1 x 1` graph node.
    fn batch_loss(
        &self,
        g: &mut Graph,
        inputs: &[&[usize]],
        labels: &[usize],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let rows: Vec<Var> = inputs
            .iter()
            .map(|input| self.logits(g, input, dropout.as_deref_mut()))
            .collect();
        let logits = g.stack_rows(&rows);
        g.cross_entropy(logits, labels)
    }
}

/// Total trainable parameter count.
pub fn count_parameters(model: &dyn Classifier) -> usize {
    model.params().count()
}

pub fn cnn_forward(model: &CnnModel, batch: &[Vec<usize>]) -> Result<Vec<ClassProbabilities>> {
    model.predict_prepared(batch)
}

pub fn bilstm_forward(
    model: &BilstmModel,
    batch: &[Vec<usize>],
) -> Result<Vec<ClassProbabilities>> {
    model.predict_prepared(batch)
}

pub fn transformer_forward(
    model: &TransformerClassifier,
    texts: &[&str],
) -> Result<Vec<ClassProbabilities>> {
    model.predict_texts(texts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Cnn(CnnConfig),
    Bilstm(BilstmConfig),
    Transformer(TransformerConfig),
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Cnn(_) => Family::Cnn,
            ModelConfig::Bilstm(_) => Family::Bilstm,
            ModelConfig::Transformer(_) => Family::Transformer,
        }
    }
}

/// Any of the three families, as stored in checkpoints.
#[derive(Debug, Clone)]
pub enum Model {
    Cnn(CnnModel),
    Bilstm(BilstmModel),
    Transformer(TransformerClassifier),
}

impl Model {
    pub fn as_classifier(&self) -> &dyn Classifier {
        match self {
            Model::Cnn(m) => m,
            Model::Bilstm(m) => m,
            Model::Transformer(m) => m,
        }
    }

    pub fn as_classifier_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Model::Cnn(m) => m,
            Model::Bilstm(m) => m,
            Model::Transformer(m) => m,
        }
    }

    pub fn family(&self) -> Family {
        self.as_classifier().family()
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Cnn(m) => ModelConfig::Cnn(m.config().clone()),
            Model::Bilstm(m) => ModelConfig::Bilstm(m.config().clone()),
            Model::Transformer(m) => ModelConfig::Transformer(m.config().clone()),
        }
    }

    pub fn save_checkpoint(&self, path: &Path, epoch: usize, dev_f1: f64) -> Result<()> {
        checkpoint::save_model(self, path, epoch, dev_f1)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointInfo)> {
        checkpoint::load_model(path)
    }
}

pub(crate) fn uniform(rng: &mut dyn RngCore, shape: (usize, usize), bound: f64) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

pub(crate) fn normal(rng: &mut dyn RngCore, shape: (usize, usize), std: f64) -> Tensor {
    let dist = rand_distr::Normal::new(0.0, std).expect("positive std");
    Tensor::from_shape_simple_fn(shape, || rng.sample(dist))
}

/// Inverted dropout: keeps each unit with probability `1 - rate` and rescales.
pub(crate) fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let shape = g.value(x).raw_dim();
    let mask = Tensor::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    g.mul_const(x, mask)
}

/// Looks up a parameter by name and checks its shape.
pub(crate) fn expect_param(
    params: &ParamSet,
    name: &str,
    shape: (usize, usize),
) -> Result<crate::autograd::ParamId> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::Validation(format!("missing parameter {name}")))?;
    let found = params.get(id).dim();
    if found != shape {
        return Err(Error::Validation(format!(
            "parameter {name}: expected shape {shape:?}, found {found:?}"
        )));
    }
    Ok(id)
}

/// Affine output map `x W + b` with `W` and `b` given by parameter ids.
pub(crate) fn affine(
    g: &mut Graph,
    x: Var,
    weight: crate::autograd::ParamId,
    bias: crate::autograd::ParamId,
) -> Var {
    let w = g.param(weight);
    let b = g.param(bias);
    let h = g.matmul(x, w);
    g.add_row(h, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_are_uniform() {
        assert_eq!(ClassProbabilities::from_logits([0.0, 0.0]).0, [0.5, 0.5]);
    }

    #[test]
    fn family_roundtrips_through_strings() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("rnn".parse::<Family>().is_err());
    }
}
