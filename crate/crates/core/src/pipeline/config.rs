use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_id_list, SplitConfig, TsvSchema, DEFAULT_LABEL_CUTOFF};
use crate::ensemble::{default_threshold_grid, MemberRule};
use crate::error::{Error, Result};
use crate::models::{EncoderBundle, Family};
use crate::text_prep::EmbeddingFormat;
use crate::training::GridConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labelled task TSV that train/dev (and optionally test) are drawn from.
    pub corpus: PathBuf,
    #[serde(default)]
    pub schema: TsvSchema,
    /// Separate test TSV; labels optional.
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    #[serde(default)]
    pub test_schema: Option<TsvSchema>,
    #[serde(default = "default_cutoff")]
    pub label_cutoff: u8,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

fn default_cutoff() -> u8 {
    DEFAULT_LABEL_CUTOFF
}

fn default_min_freq() -> usize {
    1
}

/// Split assignment as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSource {
    /// par_id list files, one id per line.
    Explicit {
        #[serde(default)]
        train_ids: Option<PathBuf>,
        dev_ids: PathBuf,
        #[serde(default)]
        test_ids: Option<PathBuf>,
    },
    Stratified {
        dev_fraction: f64,
        #[serde(default)]
        test_fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl SplitSource {
    pub fn resolve(&self, global_seed: u64) -> Result<SplitConfig> {
        Ok(match self {
            SplitSource::Explicit {
                train_ids,
                dev_ids,
                test_ids,
            } => SplitConfig::Explicit {
                train: train_ids.as_deref().map(read_id_list).transpose()?,
                dev: read_id_list(dev_ids)?,
                test: test_ids.as_deref().map(read_id_list).transpose()?,
            },
            SplitSource::Stratified {
                dev_fraction,
                test_fraction,
                seed,
            } => SplitConfig::Stratified {
                dev_fraction: *dev_fraction,
                test_fraction: *test_fraction,
                seed: seed.unwrap_or(global_seed),
            },
        })
    }

    fn has_test(&self) -> bool {
        match self {
            SplitSource::Explicit { test_ids, .. } => test_ids.is_some(),
            SplitSource::Stratified { test_fraction, .. } => *test_fraction > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub path: PathBuf,
    #[serde(default = "default_embedding_format")]
    pub format: EmbeddingFormat,
}

fn default_embedding_format() -> EmbeddingFormat {
    EmbeddingFormat::TextVec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDefinition {
    pub name: String,
    pub members: Vec<MemberRule>,
}

/// Ensemble 1: top five overall. Ensemble 2: top five transformers plus the best CNN and BiLSTM.
pub fn default_ensembles() -> Vec<EnsembleDefinition> {
    vec![
        EnsembleDefinition {
            name: "ensemble1".into(),
            members: vec![MemberRule { family: None, top: 5 }],
        },
        EnsembleDefinition {
            name: "ensemble2".into(),
            members: vec![
                MemberRule {
                    family: Some(Family::Transformer),
                    top: 5,
                },
                MemberRule {
                    family: Some(Family::Cnn),
                    top: 1,
                },
                MemberRule {
                    family: Some(Family::Bilstm),
                    top: 1,
                },
            ],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_max: usize,
    /// Reuse this threshold for every size instead of re-tuning.
    pub frozen_threshold: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_max: 30,
            frozen_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_root: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub splits: SplitSource,
    #[serde(default)]
    pub embeddings: BTreeMap<String, EmbeddingSource>,
    #[serde(default = "GridConfig::standard")]
    pub grid: GridConfig,
    #[serde(default = "default_threshold_grid")]
    pub threshold_grid: Vec<f64>,
    #[serde(default = "default_ensembles")]
    pub ensembles: Vec<EnsembleDefinition>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn must_exist(key: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{} does not exist", path.display())))
    }
}

impl PipelineConfig {
    /// Parses TOML, reporting the path of the first offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().message().to_string())
        })
    }

    /// Reads, resolves relative paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_root);
        fix(&mut self.data.corpus);
        if let Some(p) = &mut self.data.test_corpus {
            fix(p);
        }
        if let SplitSource::Explicit {
            train_ids,
            dev_ids,
            test_ids,
        } = &mut self.splits
        {
            fix(dev_ids);
            if let Some(p) = train_ids {
                fix(p);
            }
            if let Some(p) = test_ids {
                fix(p);
            }
        }
        for source in self.embeddings.values_mut() {
            fix(&mut source.path);
        }
        if let Some(t) = &mut self.grid.transformer {
            let candidate = base.join(&t.encoder_id);
            if Path::new(&t.encoder_id).is_relative() && candidate.is_dir() {
                t.encoder_id = candidate.to_string_lossy().into_owned();
            }
        }
    }

    /// Checks referenced paths, grid consistency and numeric ranges, and
    /// creates the output root.
    pub fn validate(&self) -> Result<()> {
        must_exist("data.corpus", &self.data.corpus)?;
        if let Some(p) = &self.data.test_corpus {
            must_exist("data.test_corpus", p)?;
            if self.splits.has_test() {
                return Err(Error::config(
                    "splits",
                    "a test split cannot be carved out when data.test_corpus is set",
                ));
            }
        }
        match &self.splits {
            SplitSource::Explicit {
                train_ids,
                dev_ids,
                test_ids,
            } => {
                must_exist("splits.dev_ids", dev_ids)?;
                if let Some(p) = train_ids {
                    must_exist("splits.train_ids", p)?;
                }
                if let Some(p) = test_ids {
                    must_exist("splits.test_ids", p)?;
                }
            }
            SplitSource::Stratified {
                dev_fraction,
                test_fraction,
                ..
            } => {
                let ok = |f: f64| (0.0..1.0).contains(&f);
                if !ok(*dev_fraction) || *dev_fraction == 0.0 || !ok(*test_fraction) || dev_fraction + test_fraction >= 1.0 {
                    return Err(Error::config(
                        "splits",
                        "dev_fraction must be in (0, 1), test_fraction in [0, 1), and their sum below 1",
                    ));
                }
            }
        }
        for (alias, source) in &self.embeddings {
            must_exist(&format!("embeddings.{alias}.path"), &source.path)?;
        }
        let used = |aliases: &[String], family: &str| -> Result<()> {
            for a in aliases {
                if !self.embeddings.contains_key(a) {
                    return Err(Error::config(
                        format!("grid.{family}.embeddings"),
                        format!("alias {a:?} has no [embeddings.{a}] entry"),
                    ));
                }
            }
            Ok(())
        };
        if let Some(g) = &self.grid.cnn {
            used(&g.embeddings, "cnn")?;
        }
        if let Some(g) = &self.grid.bilstm {
            used(&g.embeddings, "bilstm")?;
        }
        if let Some(t) = &self.grid.transformer {
            EncoderBundle::resolve(&t.encoder_id)
                .map_err(|e| Error::config("grid.transformer.encoder_id", e.to_string()))?;
        }
        crate::training::expand_grid(&self.grid)?;
        if self.threshold_grid.is_empty() || self.threshold_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::config("threshold_grid", "needs at least one threshold, all in (0, 1)"));
        }
        for (i, e) in self.ensembles.iter().enumerate() {
            if e.members.is_empty() || e.members.iter().any(|m| m.top == 0) {
                return Err(Error::config(
                    format!("ensembles[{i}].members"),
                    "needs at least one rule, each with top >= 1",
                ));
            }
        }
        if self.sweep.n_max == 0 {
            return Err(Error::config("sweep.n_max", "must be at least 1"));
        }
        if let Some(t) = self.sweep.frozen_threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("sweep.frozen_threshold", "must be in (0, 1)"));
            }
        }
        std::fs::create_dir_all(&self.output_root)
            .map_err(|e| Error::config("output_root", format!("{}: {e}", self.output_root.display())))?;
        let probe = self.output_root.join(".write-check");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| Error::config("output_root", format!("{} is not writable: {e}", self.output_root.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_its_path() {
        let text = r#"
output_root = "out"
[data]
corpus = "c.tsv"
colour = 3
[splits]
mode = "stratified"
dev_fraction = 0.2
"#;
        match PipelineConfig::from_toml(text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "data.colour"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_nested_value_reports_path() {
        let text = r#"
output_root = "out"
[data]
corpus = "c.tsv"
[splits]
mode = "stratified"
dev_fraction = 0.2
[grid.cnn]
max_epochs = "many"
"#;
        match PipelineConfig::from_toml(text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "grid.cnn.max_epochs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_use_the_standard_grid() {
        let text = r#"
output_root = "out"
[data]
corpus = "c.tsv"
[splits]
mode = "stratified"
dev_fraction = 0.2
"#;
        let c = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(crate::training::expand_grid(&c.grid).unwrap().len(), 46);
        assert_eq!(c.threshold_grid.len(), 19);
        assert_eq!(c.ensembles.len(), 2);
    }
}
