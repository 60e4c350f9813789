//! Config-driven orchestration of the whole experiment. Every output lands
//! under the configured output root:
//!
//! ```text
//! prepared/   train.tsv dev.tsv test.tsv vocab.txt coverage.csv
//! runs/<id>/  spec.json metrics.csv model.ckpt pred_dev.tsv pred_test.tsv
//! registry.jsonl
//! ensembles/<name>/  spec.json pred_*.tsv metrics_*.json
//! sweep/      sweep.csv sweep.svg
//! analysis/<source>-<split>/  errors_by_keyword.csv fp.tsv fn.tsv
//! report/     runs.csv individual.csv ensembles.csv report.md
//! ```

mod config;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_task_tsv, make_splits, write_bytes, write_task_tsv, DataSplit, SplitName};
use crate::ensemble::{
    average, compose_ensemble, ensemble_sweep, optimize_threshold, write_sweep, EnsembleSpec, PredictionSet,
    SweepOptions, SweepPoint,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    error_by_keyword, export_errors, macro_average, prf1, write_error_listing, ErrorBreakdown, ErrorKind,
    MetricsReport,
};
use crate::models::{EncoderBundle, Family, ModelConfig};
use crate::text_prep::{read_pretrained, PretrainedRows, Vocabulary};
use crate::training::{
    expand_grid, predict_split, train, ModelSource, Registry, TrainRunSpec, TrainedModelRecord,
    DEV_PREDICTIONS_FILE, TEST_PREDICTIONS_FILE,
};

pub use config::{
    default_ensembles, DataConfig, EmbeddingSource, EnsembleDefinition, PipelineConfig, SplitSource, SweepConfig,
};

/// Loaded corpus splits and the training vocabulary.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub splits: BTreeMap<SplitName, DataSplit>,
    pub vocab: Vocabulary,
    pub dropped_empty: usize,
}

impl Workspace {
    pub fn split(&self, name: SplitName) -> Result<&DataSplit> {
        self.splits
            .get(&name)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Validation(format!("no {name} split is configured")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alias: String,
    pub found: usize,
    pub vocab_size: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub split_sizes: BTreeMap<SplitName, usize>,
    pub vocab_size: usize,
    pub coverage: Vec<CoverageRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub trained: Vec<String>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub dev: MetricsReport,
    pub test: Option<MetricsReport>,
}

/// Metrics written next to ensemble predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsFile {
    source_id: String,
    split: SplitName,
    threshold: f64,
    metrics: MetricsReport,
}

pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(Self::new(PipelineConfig::load(path)?))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_root(&self) -> &Path {
        &self.config.output_root
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output_root().join("prepared")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.output_root().join("runs").join(run_id)
    }

    pub fn registry(&self) -> Registry {
        Registry::new(self.output_root().join("registry.jsonl"))
    }

    pub fn ensemble_dir(&self, name: &str) -> PathBuf {
        self.output_root().join("ensembles").join(name)
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.output_root().join("sweep")
    }

    pub fn analysis_dir(&self, source: &str, split: SplitName) -> PathBuf {
        self.output_root().join("analysis").join(format!("{source}-{split}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_root().join("report")
    }

    /// Loads the corpus, assigns splits and builds the vocabulary from the train split.
    pub fn load_data(&self) -> Result<Workspace> {
        let data = &self.config.data;
        let load = load_task_tsv(&data.corpus, &data.schema, data.label_cutoff)?;
        let mut splits = make_splits(&load.records, &self.config.splits.resolve(self.config.seed)?)?;
        let mut dropped_empty = load.dropped_empty;
        if let Some(path) = &data.test_corpus {
            let schema = data.test_schema.clone().unwrap_or_else(|| data.schema.clone());
            let test = load_task_tsv(path, &schema, data.label_cutoff)?;
            dropped_empty += test.dropped_empty;
            splits.insert(
                SplitName::Test,
                DataSplit {
                    name: SplitName::Test,
                    records: test.records,
                },
            );
        }
        let train = splits
            .get(&SplitName::Train)
            .ok_or_else(|| Error::Validation("split assignment produced no train split".into()))?;
        let vocab = Vocabulary::build(train.records.iter().map(|r| r.text.as_str()), data.min_freq);
        Ok(Workspace {
            splits,
            vocab,
            dropped_empty,
        })
    }

    fn pretrained(&self, alias: &str, vocab: &Vocabulary) -> Result<PretrainedRows> {
        let source = self
            .config
            .embeddings
            .get(alias)
            .ok_or_else(|| Error::config(format!("embeddings.{alias}"), "alias is not configured"))?;
        read_pretrained(&source.path, source.format, vocab)
    }

    /// Writes the materialised splits, vocabulary and embedding coverage.
    /// Output bytes depend only on the inputs.
    pub fn prepare(&self) -> Result<PrepareSummary> {
        let ws = self.load_data()?;
        let dir = self.prepared_dir();
        let mut split_sizes = BTreeMap::new();
        for (name, split) in &ws.splits {
            write_task_tsv(&dir.join(format!("{name}.tsv")), &split.records)?;
            split_sizes.insert(*name, split.len());
        }
        ws.vocab.save(&dir.join("vocab.txt"))?;
        let mut coverage = Vec::new();
        for alias in self.config.embeddings.keys() {
            let rows = self.pretrained(alias, &ws.vocab)?;
            coverage.push(CoverageRow {
                alias: alias.clone(),
                found: rows.found(),
                vocab_size: ws.vocab.len(),
                coverage: rows.coverage(),
            });
        }
        let mut csv = String::from("alias,found,vocab_size,coverage\n");
        for c in &coverage {
            let _ = writeln!(csv, "{},{},{},{:.6}", c.alias, c.found, c.vocab_size, c.coverage);
        }
        write_bytes(&dir.join("coverage.csv"), csv.as_bytes())?;
        info!(
            "prepared {} splits, vocabulary of {} tokens, {} empty rows dropped",
            ws.splits.len(),
            ws.vocab.len(),
            ws.dropped_empty
        );
        Ok(PrepareSummary {
            split_sizes,
            vocab_size: ws.vocab.len(),
            coverage,
        })
    }

    pub fn grid_specs(&self, family: Option<Family>) -> Result<Vec<TrainRunSpec>> {
        Ok(expand_grid(&self.config.grid)?
            .into_iter()
            .filter(|s| family.is_none_or(|f| s.family() == f))
            .collect())
    }

    fn run_specs(&self, ws: &Workspace, specs: &[TrainRunSpec], jobs: usize) -> Result<Vec<TrainedModelRecord>> {
        let mut tables: BTreeMap<String, PretrainedRows> = BTreeMap::new();
        let mut encoders: BTreeMap<String, EncoderBundle> = BTreeMap::new();
        for spec in specs {
            if let Some(alias) = &spec.embedding {
                if !tables.contains_key(alias) {
                    tables.insert(alias.clone(), self.pretrained(alias, &ws.vocab)?);
                }
            }
            if let ModelConfig::Transformer(t) = &spec.model {
                if !encoders.contains_key(&t.encoder_id) {
                    encoders.insert(t.encoder_id.clone(), EncoderBundle::load_by_id(&t.encoder_id)?);
                }
            }
        }
        let train_split = ws.split(SplitName::Train)?;
        let dev_split = ws.split(SplitName::Dev)?;
        let test_split = ws.splits.get(&SplitName::Test).filter(|s| !s.is_empty());
        let registry = self.registry();

        let run_one = |spec: &TrainRunSpec| -> Result<TrainedModelRecord> {
            let source = match &spec.model {
                ModelConfig::Transformer(t) => ModelSource::Encoder(&encoders[&t.encoder_id]),
                _ => ModelSource::Words {
                    vocab: &ws.vocab,
                    pretrained: spec.embedding.as_ref().map(|a| &tables[a]),
                },
            };
            let dir = self.run_dir(&spec.run_id);
            let outcome = train(spec, source, train_split, dev_split, &dir)?;
            if let Some(test) = test_split {
                predict_split(&outcome.model, test, &spec.run_id)?.write_tsv(&dir.join(TEST_PREDICTIONS_FILE))?;
            }
            registry.append(&outcome.record)?;
            Ok(outcome.record)
        };

        if jobs <= 1 {
            specs.iter().map(run_one).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::Validation(format!("cannot start {jobs} workers: {e}")))?;
            pool.install(|| specs.par_iter().map(run_one).collect())
        }
    }

    /// Trains one grid run by id.
    pub fn train_one(&self, run_id: &str) -> Result<TrainedModelRecord> {
        let spec = self
            .grid_specs(None)?
            .into_iter()
            .find(|s| s.run_id == run_id)
            .ok_or_else(|| Error::config("grid", format!("no run with id {run_id:?} in the grid")))?;
        let ws = self.load_data()?;
        Ok(self.run_specs(&ws, &[spec], 1)?.remove(0))
    }

    /// Trains every grid run (optionally one family), skipping runs already in
    /// the registry when `resume` is set.
    pub fn grid(&self, family: Option<Family>, resume: bool, jobs: usize) -> Result<GridSummary> {
        let specs = self.grid_specs(family)?;
        let done: Vec<String> = if resume {
            self.registry().load()?.into_iter().map(|r| r.run_id).collect()
        } else {
            Vec::new()
        };
        let (skip, todo): (Vec<TrainRunSpec>, Vec<TrainRunSpec>) =
            specs.into_iter().partition(|s| done.contains(&s.run_id));
        if !skip.is_empty() {
            info!("resuming: {} runs already registered", skip.len());
        }
        let trained = if todo.is_empty() {
            Vec::new()
        } else {
            let ws = self.load_data()?;
            self.run_specs(&ws, &todo, jobs.max(1))?
        };
        Ok(GridSummary {
            trained: trained.into_iter().map(|r| r.run_id).collect(),
            skipped: skip.into_iter().map(|s| s.run_id).collect(),
        })
    }

    fn registry_records(&self) -> Result<Vec<TrainedModelRecord>> {
        let records = self.registry().load()?;
        if records.is_empty() {
            return Err(Error::Selection(format!(
                "registry {} has no runs; run `grid` first",
                self.registry().path().display()
            )));
        }
        Ok(records)
    }

    /// Predictions of a registered run on a split, computed from the checkpoint
    /// when no prediction file exists yet.
    fn run_predictions(&self, record: &TrainedModelRecord, ws: &Workspace, split: SplitName) -> Result<PredictionSet> {
        let file = match split {
            SplitName::Dev => DEV_PREDICTIONS_FILE,
            SplitName::Test => TEST_PREDICTIONS_FILE,
            SplitName::Train => "pred_train.tsv",
        };
        let path = self.run_dir(&record.run_id).join(file);
        if path.exists() {
            return PredictionSet::read_tsv(&path, &record.run_id, split);
        }
        let set = predict_split(&record.load_model()?, ws.split(split)?, &record.run_id)?;
        set.write_tsv(&path)?;
        Ok(set)
    }

    /// Writes predictions of one run (or every registered run) on a split.
    pub fn predict(&self, run_id: Option<&str>, split: SplitName) -> Result<Vec<PathBuf>> {
        let records = self.registry_records()?;
        let chosen: Vec<&TrainedModelRecord> = match run_id {
            Some(id) => vec![records
                .iter()
                .find(|r| r.run_id == id)
                .ok_or_else(|| Error::Selection(format!("run {id:?} is not in the registry")))?],
            None => records.iter().collect(),
        };
        let ws = self.load_data()?;
        let split_data = ws.split(split)?;
        chosen
            .into_iter()
            .map(|r| {
                let set = predict_split(&r.load_model()?, split_data, &r.run_id)?;
                let path = self.run_dir(&r.run_id).join(format!("pred_{split}.tsv"));
                set.write_tsv(&path)?;
                Ok(path)
            })
            .collect()
    }

    fn write_metrics(&self, path: &Path, set: &PredictionSet, threshold: f64, metrics: MetricsReport) -> Result<()> {
        let file = MetricsFile {
            source_id: set.source_id.clone(),
            split: set.split,
            threshold,
            metrics,
        };
        write_bytes(path, (serde_json::to_string_pretty(&file)? + "\n").as_bytes())
    }

    /// Builds the named ensemble (or all configured ones), tunes its threshold
    /// on dev and evaluates dev and, when labelled, test.
    pub fn ensemble(&self, name: Option<&str>) -> Result<Vec<EnsembleResult>> {
        let defs: Vec<&EnsembleDefinition> = match name {
            Some(n) => vec![self
                .config
                .ensembles
                .iter()
                .find(|e| e.name == n)
                .ok_or_else(|| Error::config("ensembles", format!("no ensemble named {n:?}")))?],
            None => self.config.ensembles.iter().collect(),
        };
        let records = self.registry_records()?;
        let ws = self.load_data()?;
        let dev_labels = ws.split(SplitName::Dev)?.labels()?;
        let mut results = Vec::new();
        for def in defs {
            let mut spec = compose_ensemble(&def.name, &records, &def.members)?;
            let members: Vec<&TrainedModelRecord> = spec
                .members
                .iter()
                .map(|m| records.iter().find(|r| &r.run_id == m).expect("selected from registry"))
                .collect();
            let dir = self.ensemble_dir(&def.name);

            let dev_sets = members
                .iter()
                .map(|r| self.run_predictions(r, &ws, SplitName::Dev))
                .collect::<Result<Vec<_>>>()?;
            let mut dev = average(&dev_sets)?;
            dev.source_id = def.name.clone();
            let (threshold, _) = optimize_threshold(&dev, &dev_labels, &self.config.threshold_grid)?;
            spec.threshold = Some(threshold);
            let dev_metrics = prf1(&crate::ensemble::apply_threshold(&dev, threshold), &dev_labels)?;
            dev.write_tsv(&dir.join("pred_dev.tsv"))?;
            self.write_metrics(&dir.join("metrics_dev.json"), &dev, threshold, dev_metrics)?;

            let mut test_metrics = None;
            if let Some(test_split) = ws.splits.get(&SplitName::Test).filter(|s| !s.is_empty()) {
                let test_sets = members
                    .iter()
                    .map(|r| self.run_predictions(r, &ws, SplitName::Test))
                    .collect::<Result<Vec<_>>>()?;
                let mut test = average(&test_sets)?;
                test.source_id = def.name.clone();
                test.write_tsv(&dir.join("pred_test.tsv"))?;
                if test_split.has_labels() {
                    let labels = test_split.labels()?;
                    let m = prf1(&crate::ensemble::apply_threshold(&test, threshold), &labels)?;
                    self.write_metrics(&dir.join("metrics_test.json"), &test, threshold, m)?;
                    test_metrics = Some(m);
                } else {
                    warn!("{}: test split has no labels, wrote predictions only", def.name);
                }
            }
            spec.write_json(&dir.join("spec.json"))?;
            info!(
                "{}: {} members, threshold {threshold}, dev F1 {:.4}",
                def.name,
                spec.members.len(),
                dev_metrics.f1
            );
            results.push(EnsembleResult {
                spec,
                dev: dev_metrics,
                test: test_metrics,
            });
        }
        Ok(results)
    }

    /// Dev metrics of the top-n average for n up to the configured maximum.
    pub fn sweep(&self) -> Result<Vec<SweepPoint>> {
        let records = self.registry_records()?;
        let ws = self.load_data()?;
        let labels = ws.split(SplitName::Dev)?.labels()?;
        let n_max = self.config.sweep.n_max;
        let ranked = crate::ensemble::rank_records(&records, None);
        let predictions = ranked
            .iter()
            .take(n_max)
            .map(|r| Ok((r.run_id.clone(), self.run_predictions(r, &ws, SplitName::Dev)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        let options = SweepOptions {
            grid: self.config.threshold_grid.clone(),
            frozen_threshold: self.config.sweep.frozen_threshold,
        };
        let points = ensemble_sweep(&records, &predictions, n_max, &labels, &options)?;
        let dir = self.sweep_dir();
        write_sweep(&points, &dir.join("sweep.csv"), &dir.join("sweep.svg"))?;
        Ok(points)
    }

    /// Keyword error breakdown plus FP/FN listings for a run or an ensemble.
    pub fn analyze(&self, source: &str, split: SplitName) -> Result<ErrorBreakdown> {
        let ws = self.load_data()?;
        let split_data = ws.split(split)?;
        if !split_data.has_labels() {
            return Err(Error::MissingLabels(format!(
                "the {split} split has no labels, so errors cannot be analysed"
            )));
        }
        let labels = split_data.labels()?;
        let ensemble_spec = self.ensemble_dir(source).join("spec.json");
        let (set, threshold) = if ensemble_spec.exists() {
            let spec = EnsembleSpec::read_json(&ensemble_spec)?;
            let path = self.ensemble_dir(source).join(format!("pred_{split}.tsv"));
            let set = PredictionSet::read_tsv(&path, source, split)?;
            let threshold = spec
                .threshold
                .ok_or_else(|| Error::Validation(format!("ensemble {source} has no tuned threshold")))?;
            (set, threshold)
        } else {
            let records = self.registry_records()?;
            let record = records
                .iter()
                .find(|r| r.run_id == source)
                .ok_or_else(|| Error::Selection(format!("{source:?} is neither an ensemble nor a registered run")))?;
            let dev = self.run_predictions(record, &ws, SplitName::Dev)?;
            let dev_labels = ws.split(SplitName::Dev)?.labels()?;
            let (threshold, _) = optimize_threshold(&dev, &dev_labels, &self.config.threshold_grid)?;
            (self.run_predictions(record, &ws, split)?, threshold)
        };
        let preds = crate::ensemble::apply_threshold(&set, threshold);
        let breakdown = error_by_keyword(&preds, &labels, &split_data.records)?;
        let dir = self.analysis_dir(source, split);
        breakdown.write_csv(&dir.join("errors_by_keyword.csv"))?;
        for (kind, file) in [(ErrorKind::Fp, "fp.tsv"), (ErrorKind::Fn, "fn.tsv")] {
            let listing = export_errors(&set, threshold, &labels, &split_data.records, kind)?;
            write_error_listing(&dir.join(file), &listing)?;
        }
        Ok(breakdown)
    }

    /// Per-run and per-configuration summaries plus ensemble metrics.
    pub fn report(&self) -> Result<PathBuf> {
        let records = self.registry_records()?;
        let ws = self.load_data()?;
        let dev_labels = ws.split(SplitName::Dev)?.labels()?;
        let dir = self.report_dir();

        let mut runs_csv = String::from(
            "run_id,family,embedding,schedule,base_lr,seed,parameters,best_epoch,dev_precision,dev_recall,dev_f1,tuned_threshold,tuned_f1\n",
        );
        let mut groups: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
        let mut sorted: Vec<&TrainedModelRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        for r in sorted {
            let dev = self.run_predictions(r, &ws, SplitName::Dev)?;
            let (t, tuned_f1) = optimize_threshold(&dev, &dev_labels, &self.config.threshold_grid)?;
            let at_half = prf1(&crate::ensemble::apply_threshold(&dev, 0.5), &dev_labels)?;
            let schedule = match r.spec.lr_schedule {
                crate::training::LrSchedule::Constant => "constant".to_string(),
                crate::training::LrSchedule::Stepwise { step_size, gamma } => format!("step{step_size}x{gamma}"),
            };
            let embedding = r.spec.embedding.clone().unwrap_or_default();
            let _ = writeln!(
                runs_csv,
                "{},{},{},{},{:e},{},{},{},{:.4},{:.4},{:.4},{},{:.4}",
                r.run_id,
                r.family(),
                embedding,
                schedule,
                r.spec.base_lr,
                r.spec.seed,
                r.parameter_count,
                r.best_epoch,
                at_half.precision,
                at_half.recall,
                at_half.f1,
                t,
                tuned_f1
            );
            let group = match r.family() {
                Family::Transformer => format!("transformer {schedule}"),
                f => format!("{f} {embedding}"),
            };
            groups.entry(group).or_default().push(at_half);
        }
        write_bytes(&dir.join("runs.csv"), runs_csv.as_bytes())?;

        let mut individual = String::from("group,runs,precision,recall,f1\n");
        for (group, reports) in &groups {
            let avg = macro_average(reports)?;
            let _ = writeln!(
                individual,
                "{group},{},{:.4},{:.4},{:.4}",
                avg.runs, avg.precision, avg.recall, avg.f1
            );
        }
        write_bytes(&dir.join("individual.csv"), individual.as_bytes())?;

        let mut ensembles = String::from("ensemble,split,members,threshold,precision,recall,f1\n");
        for def in &self.config.ensembles {
            let edir = self.ensemble_dir(&def.name);
            let Ok(spec) = EnsembleSpec::read_json(&edir.join("spec.json")) else {
                continue;
            };
            for split in [SplitName::Dev, SplitName::Test] {
                let path = edir.join(format!("metrics_{split}.json"));
                if !path.exists() {
                    continue;
                }
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let m: MetricsFile = serde_json::from_str(&text)?;
                let _ = writeln!(
                    ensembles,
                    "{},{split},{},{},{:.4},{:.4},{:.4}",
                    def.name,
                    spec.members.join(" "),
                    m.threshold,
                    m.metrics.precision,
                    m.metrics.recall,
                    m.metrics.f1
                );
            }
        }
        write_bytes(&dir.join("ensembles.csv"), ensembles.as_bytes())?;

        let mut md = String::from("# Experiment report\n\n");
        let _ = writeln!(md, "Registered runs: {}\n", records.len());
        md.push_str("## Individual models (dev, threshold 0.5, averaged over runs)\n\n");
        md.push_str(&csv_to_markdown(&individual));
        md.push_str("\n## Ensembles\n\n");
        md.push_str(&csv_to_markdown(&ensembles));
        if self.sweep_dir().join("sweep.csv").exists() {
            md.push_str("\n## Ensemble size sweep\n\nSee `../sweep/sweep.csv` and `../sweep/sweep.svg`.\n");
        }
        let path = dir.join("report.md");
        write_bytes(&path, md.as_bytes())?;
        Ok(path)
    }
}

fn csv_to_markdown(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols = header.split(',').count();
    let mut out = format!("| {} |\n|{}\n", header.replace(',', " | "), " --- |".repeat(cols));
    for line in lines {
        let _ = writeln!(out, "| {} |", line.replace(',', " | "));
    }
    out
}
