//! Self-describing tensor archive.
//!
//! Layout: the 8-byte magic `PCLCKPT1`, a little-endian `u64` header length,
//! a UTF-8 JSON header `{"meta": .., "tensors": [{"name", "rows", "cols"}]}`,
//! then every tensor's values as little-endian `f64` in row-major order, in
//! header order. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bilstm::BilstmModel;
use super::cnn::CnnModel;
use super::subword::SubwordTokenizer;
use super::transformer::{EncoderConfig, TransformerClassifier};
use super::{Model, ModelConfig};
use crate::autograd::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::text_prep::Vocabulary;

const MAGIC: &[u8; 8] = b"PCLCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn write_archive(path: &Path, meta: &impl Serialize, params: &ParamSet) -> Result<()> {
    let header = Header {
        meta: serde_json::to_value(meta)?,
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + header.len() + params.count() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, t) in params.iter() {
        for x in t.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    crate::corpus::write_bytes(path, &bytes)
}

pub fn read_archive(path: &Path) -> Result<(serde_json::Value, ParamSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: &str| Error::format(path, msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint archive"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if bytes.len() - data_start != expected {
        return Err(corrupt("tensor data size does not match header"));
    }
    let mut params = ParamSet::new();
    let mut offset = data_start;
    for entry in header.tensors {
        let n = entry.rows * entry.cols;
        let values: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += n * 8;
        let t = Tensor::from_shape_vec((entry.rows, entry.cols), values)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if params.id(&entry.name).is_some() {
            return Err(Error::format(path, format!("duplicate tensor {}", entry.name)));
        }
        params.add(entry.name, t);
    }
    Ok((header.meta, params))
}

/// Epoch and development F1 recorded when the checkpoint was written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub dev_f1: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    #[serde(default)]
    vocab_hash: Option<String>,
    #[serde(default)]
    vocab: Option<Vec<String>>,
    #[serde(default)]
    encoder_id: Option<String>,
    #[serde(default)]
    encoder_config: Option<EncoderConfig>,
    #[serde(default)]
    subword_vocab: Option<Vec<String>>,
    info: CheckpointInfo,
}

pub(super) fn save_model(model: &Model, path: &Path, epoch: usize, dev_f1: f64) -> Result<()> {
    let info = CheckpointInfo { epoch, dev_f1 };
    let mut meta = ModelMeta {
        config: model.config(),
        vocab_hash: None,
        vocab: None,
        encoder_id: None,
        encoder_config: None,
        subword_vocab: None,
        info,
    };
    let vocab = match model {
        Model::Cnn(m) => Some(m.vocab()),
        Model::Bilstm(m) => Some(m.vocab()),
        Model::Transformer(m) => {
            meta.encoder_id = Some(m.encoder_id().to_string());
            meta.encoder_config = Some(m.encoder_config().clone());
            meta.subword_vocab = Some(m.tokenizer().pieces().to_vec());
            None
        }
    };
    if let Some(v) = vocab {
        meta.vocab_hash = Some(v.hash());
        meta.vocab = Some(v.tokens().to_vec());
    }
    write_archive(path, &meta, model.as_classifier().params())
}

pub(super) fn load_model(path: &Path) -> Result<(Model, CheckpointInfo)> {
    let (meta, params) = read_archive(path)?;
    let meta: ModelMeta = serde_json::from_value(meta)
        .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    let bad = |e: Error| Error::format(path, e.to_string());
    let word_vocab = || -> Result<Vocabulary> {
        let tokens = meta
            .vocab
            .clone()
            .ok_or_else(|| Error::format(path, "missing vocabulary"))?;
        let vocab = Vocabulary::from_tokens(tokens).map_err(bad)?;
        if meta.vocab_hash.as_deref() != Some(vocab.hash().as_str()) {
            return Err(Error::format(path, "vocabulary hash mismatch"));
        }
        Ok(vocab)
    };
    let model = match meta.config.clone() {
        ModelConfig::Cnn(c) => Model::Cnn(CnnModel::from_parts(c, word_vocab()?, params).map_err(bad)?),
        ModelConfig::Bilstm(c) => {
            Model::Bilstm(BilstmModel::from_parts(c, word_vocab()?, params).map_err(bad)?)
        }
        ModelConfig::Transformer(c) => {
            let missing = || Error::format(path, "missing encoder metadata");
            let tokenizer =
                SubwordTokenizer::from_pieces(meta.subword_vocab.clone().ok_or_else(missing)?)
                    .map_err(bad)?;
            Model::Transformer(
                TransformerClassifier::from_parts(
                    c,
                    meta.encoder_id.clone().ok_or_else(missing)?,
                    meta.encoder_config.clone().ok_or_else(missing)?,
                    tokenizer,
                    params,
                )
                .map_err(bad)?,
            )
        }
    };
    Ok((model, meta.info))
}
