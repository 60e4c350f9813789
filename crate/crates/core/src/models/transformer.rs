//! Classification head over a bidirectional transformer encoder.
//!
//! The encoder follows the post-layer-norm BERT/RoBERTa layout: token and
//! learned position embeddings, then per layer multi-head self-attention and
//! a GELU feed-forward block, each wrapped in residual + LayerNorm. The final
//! layer's vector at the leading `<s>` position feeds an affine head.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_archive, write_archive};
use super::subword::SubwordTokenizer;
use super::{affine, dropout, expect_param, normal, Classifier, Family};
use crate::autograd::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

/// Directory searched for encoder bundles named by id rather than path.
pub const ENCODER_CACHE_ENV: &str = "PCL_ENCODER_CACHE";
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_encoder_dropout")]
    pub dropout: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

fn default_encoder_dropout() -> f64 {
    0.1
}

impl EncoderConfig {
    /// A 2-layer encoder small enough to fine-tune on a CPU.
    pub fn miniature(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 16,
            layers: 2,
            heads: 2,
            intermediate: 32,
            max_positions: 64,
            layer_norm_eps: default_ln_eps(),
            dropout: default_encoder_dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(
                "encoder.heads",
                format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads),
            ));
        }
        if self.layers == 0 || self.intermediate == 0 || self.max_positions < 2 {
            return Err(Error::config(
                "encoder",
                "layers and intermediate must be positive, max_positions at least 2",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("encoder.dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    /// Path of an encoder bundle directory, or a name resolved under `$PCL_ENCODER_CACHE`.
    pub encoder_id: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_max_tokens() -> usize {
    512
}

impl TransformerConfig {
    pub fn new(encoder_id: impl Into<String>) -> Self {
        Self {
            encoder_id: encoder_id.into(),
            max_tokens: default_max_tokens(),
        }
    }
}

/// Pretrained encoder weights with their tokenizer, as stored on disk:
/// `encoder.json`, `vocab.txt` and `weights.ckpt` in one directory.
#[derive(Debug, Clone)]
pub struct EncoderBundle {
    pub encoder_id: String,
    pub config: EncoderConfig,
    pub tokenizer: SubwordTokenizer,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    encoder_id: String,
    config: EncoderConfig,
}

impl EncoderBundle {
    /// A randomly initialised encoder with a tokenizer trained on `texts`.
    pub fn miniature<'a>(
        encoder_id: impl Into<String>,
        texts: impl IntoIterator<Item = &'a str>,
        mut config: EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        let tokenizer = SubwordTokenizer::train(texts, config.vocab_size);
        config.vocab_size = tokenizer.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_encoder(&config, &mut rng);
        Ok(Self {
            encoder_id: encoder_id.into(),
            config,
            tokenizer,
            params,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = BundleManifest {
            encoder_id: self.encoder_id.clone(),
            config: self.config.clone(),
        };
        crate::corpus::write_bytes(
            &dir.join("encoder.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        self.tokenizer.save(&dir.join("vocab.txt"))?;
        write_archive(&dir.join("weights.ckpt"), &serde_json::json!({"kind": "encoder"}), &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("encoder.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        manifest.config.validate()?;
        let tokenizer = SubwordTokenizer::load(&dir.join("vocab.txt"))?;
        let (_, params) = read_archive(&dir.join("weights.ckpt"))?;
        if tokenizer.len() != manifest.config.vocab_size {
            return Err(Error::format(
                dir,
                format!(
                    "tokenizer has {} pieces, encoder expects {}",
                    tokenizer.len(),
                    manifest.config.vocab_size
                ),
            ));
        }
        EncoderIds::resolve(&params, &manifest.config)
            .map_err(|e| Error::format(dir.join("weights.ckpt"), e.to_string()))?;
        Ok(Self {
            encoder_id: manifest.encoder_id,
            config: manifest.config,
            tokenizer,
            params,
        })
    }

    /// Finds the bundle directory for an encoder id: an existing directory
    /// path, else `$PCL_ENCODER_CACHE/<id>`.
    pub fn resolve(encoder_id: &str) -> Result<PathBuf> {
        let direct = PathBuf::from(encoder_id);
        if direct.is_dir() {
            return Ok(direct);
        }
        if let Some(cache) = env::var_os(ENCODER_CACHE_ENV) {
            let cached = PathBuf::from(cache).join(encoder_id);
            if cached.is_dir() {
                return Ok(cached);
            }
        }
        Err(Error::format(
            direct,
            format!("encoder weights for {encoder_id:?} not found (set {ENCODER_CACHE_ENV} or give a bundle path)"),
        ))
    }

    pub fn load_by_id(encoder_id: &str) -> Result<Self> {
        Self::load(&Self::resolve(encoder_id)?)
    }
}

fn init_encoder(config: &EncoderConfig, rng: &mut dyn RngCore) -> ParamSet {
    let (h, f) = (config.hidden, config.intermediate);
    let layer_std = 1.0 / (h as f64).sqrt();
    let mut p = ParamSet::new();
    p.add("embeddings.word", normal(rng, (config.vocab_size, h), INIT_STD));
    p.add("embeddings.position", normal(rng, (config.max_positions, h), INIT_STD));
    p.add("embeddings.ln.gamma", Tensor::ones((1, h)));
    p.add("embeddings.ln.beta", Tensor::zeros((1, h)));
    for l in 0..config.layers {
        for name in ["q", "k", "v", "out"] {
            p.add(format!("layer{l}.attn.{name}.weight"), normal(rng, (h, h), layer_std));
            p.add(format!("layer{l}.attn.{name}.bias"), Tensor::zeros((1, h)));
        }
        p.add(format!("layer{l}.attn.ln.gamma"), Tensor::ones((1, h)));
        p.add(format!("layer{l}.attn.ln.beta"), Tensor::zeros((1, h)));
        p.add(format!("layer{l}.ffn.in.weight"), normal(rng, (h, f), layer_std));
        p.add(format!("layer{l}.ffn.in.bias"), Tensor::zeros((1, f)));
        p.add(format!("layer{l}.ffn.out.weight"), normal(rng, (f, h), layer_std));
        p.add(format!("layer{l}.ffn.out.bias"), Tensor::zeros((1, h)));
        p.add(format!("layer{l}.ffn.ln.gamma"), Tensor::ones((1, h)));
        p.add(format!("layer{l}.ffn.ln.beta"), Tensor::zeros((1, h)));
    }
    p
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    q: Affine,
    k: Affine,
    v: Affine,
    out: Affine,
    attn_ln: Norm,
    ffn_in: Affine,
    ffn_out: Affine,
    ffn_ln: Norm,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    word: ParamId,
    position: ParamId,
    emb_ln: Norm,
    layers: Vec<LayerIds>,
}

impl EncoderIds {
    fn resolve(p: &ParamSet, c: &EncoderConfig) -> Result<Self> {
        let (h, f) = (c.hidden, c.intermediate);
        let affine = |name: &str, rows: usize, cols: usize| -> Result<Affine> {
            Ok(Affine {
                weight: expect_param(p, &format!("{name}.weight"), (rows, cols))?,
                bias: expect_param(p, &format!("{name}.bias"), (1, cols))?,
            })
        };
        let norm = |name: &str| -> Result<Norm> {
            Ok(Norm {
                gamma: expect_param(p, &format!("{name}.gamma"), (1, h))?,
                beta: expect_param(p, &format!("{name}.beta"), (1, h))?,
            })
        };
        let layers = (0..c.layers)
            .map(|l| {
                Ok(LayerIds {
                    q: affine(&format!("layer{l}.attn.q"), h, h)?,
                    k: affine(&format!("layer{l}.attn.k"), h, h)?,
                    v: affine(&format!("layer{l}.attn.v"), h, h)?,
                    out: affine(&format!("layer{l}.attn.out"), h, h)?,
                    attn_ln: norm(&format!("layer{l}.attn.ln"))?,
                    ffn_in: affine(&format!("layer{l}.ffn.in"), h, f)?,
                    ffn_out: affine(&format!("layer{l}.ffn.out"), f, h)?,
                    ffn_ln: norm(&format!("layer{l}.ffn.ln"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            word: expect_param(p, "embeddings.word", (c.vocab_size, h))?,
            position: expect_param(p, "embeddings.position", (c.max_positions, h))?,
            emb_ln: norm("embeddings.ln")?,
            layers,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TransformerClassifier {
    config: TransformerConfig,
    encoder: EncoderConfig,
    encoder_id: String,
    tokenizer: SubwordTokenizer,
    params: ParamSet,
    ids: EncoderIds,
    head: Affine,
}

impl TransformerClassifier {
    /// Encoder weights from the bundle plus a freshly initialised head.
    pub fn from_bundle(
        bundle: EncoderBundle,
        config: TransformerConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut params = bundle.params;
        let h = bundle.config.hidden;
        params.add("head.weight", normal(rng, (h, 2), INIT_STD));
        params.add("head.bias", Tensor::zeros((1, 2)));
        Self::from_parts(config, bundle.encoder_id, bundle.config, bundle.tokenizer, params)
    }

    pub fn from_parts(
        config: TransformerConfig,
        encoder_id: String,
        encoder: EncoderConfig,
        tokenizer: SubwordTokenizer,
        params: ParamSet,
    ) -> Result<Self> {
        encoder.validate()?;
        if config.max_tokens < 2 || config.max_tokens > encoder.max_positions {
            return Err(Error::config(
                "transformer.max_tokens",
                format!("must be in 2..={} for this encoder", encoder.max_positions),
            ));
        }
        let ids = EncoderIds::resolve(&params, &encoder)?;
        let head = Affine {
            weight: expect_param(&params, "head.weight", (encoder.hidden, 2))?,
            bias: expect_param(&params, "head.bias", (1, 2))?,
        };
        Ok(Self {
            config,
            encoder,
            encoder_id,
            tokenizer,
            params,
            ids,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn tokenizer(&self) -> &SubwordTokenizer {
        &self.tokenizer
    }

    /// Sets the head weights and bias to zero.
    pub fn zero_head(&mut self) {
        self.params.get_mut(self.head.weight).fill(0.0);
        self.params.get_mut(self.head.bias).fill(0.0);
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, norm: Norm) -> Var {
        let n = g.layer_norm_rows(x, self.encoder.layer_norm_eps);
        let gamma = g.param(norm.gamma);
        let beta = g.param(norm.beta);
        let n = g.mul_row(n, gamma);
        g.add_row(n, beta)
    }
}

impl Classifier for TransformerClassifier {
    fn family(&self) -> Family {
        Family::Transformer
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn prepare(&self, text: &str) -> Vec<usize> {
        self.tokenizer.encode(text, self.config.max_tokens)
    }

    fn logits(&self, g: &mut Graph, input: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Var {
        let c = &self.encoder;
        let ids = &input[..input.len().min(self.config.max_tokens)];
        let positions: Vec<usize> = (0..ids.len()).collect();
        let heads = c.heads;
        let dh = c.hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let word = g.param(self.ids.word);
        let pos = g.param(self.ids.position);
        let w = g.gather(word, ids, None);
        let p = g.gather(pos, &positions, None);
        let x = g.add(w, p);
        let x = self.layer_norm(g, x, self.ids.emb_ln);
        let mut x = dropout(g, x, c.dropout, rng.as_deref_mut());

        for layer in &self.ids.layers {
            let q = affine(g, x, layer.q.weight, layer.q.bias);
            let k = affine(g, x, layer.k.weight, layer.k.bias);
            let v = affine(g, x, layer.v.weight, layer.v.bias);
            let contexts: Vec<Var> = (0..heads)
                .map(|hd| {
                    let (from, to) = (hd * dh, (hd + 1) * dh);
                    let qh = g.slice_cols(q, from, to);
                    let kh = g.slice_cols(k, from, to);
                    let vh = g.slice_cols(v, from, to);
                    let kt = g.transpose(kh);
                    let scores = g.matmul(qh, kt);
                    let scores = g.scale(scores, scale);
                    let attn = g.softmax_rows(scores);
                    g.matmul(attn, vh)
                })
                .collect();
            let ctx = g.concat_cols(&contexts);
            let attn_out = affine(g, ctx, layer.out.weight, layer.out.bias);
            let attn_out = dropout(g, attn_out, c.dropout, rng.as_deref_mut());
            let res = g.add(x, attn_out);
            x = self.layer_norm(g, res, layer.attn_ln);

            let hidden = affine(g, x, layer.ffn_in.weight, layer.ffn_in.bias);
            let hidden = g.gelu(hidden);
            let ffn = affine(g, hidden, layer.ffn_out.weight, layer.ffn_out.bias);
            let ffn = dropout(g, ffn, c.dropout, rng.as_deref_mut());
            let res = g.add(x, ffn);
            x = self.layer_norm(g, res, layer.ffn_ln);
        }
        let cls = g.select_row(x, 0);
        affine(g, cls, self.head.weight, self.head.bias)
    }
}
