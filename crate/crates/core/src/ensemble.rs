//! Probability averaging, threshold tuning, top-N member selection and the
//! ensemble-size sweep.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{par_id_cmp, write_bytes, SplitName};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::models::Family;
use crate::plot;
use crate::training::TrainedModelRecord;

/// Positive-class probabilities from one model or ensemble on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub source_id: String,
    pub split: SplitName,
    pub entries: Vec<(String, f64)>,
}

/// Formats a probability so that it parses back to the same `f64`.
pub fn format_probability(p: f64) -> String {
    format!("{p:.16e}")
}

impl PredictionSet {
    /// Checks that ids are unique and probabilities lie in `[0, 1]`.
    pub fn new(
        source_id: impl Into<String>,
        split: SplitName,
        entries: Vec<(String, f64)>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (id, p) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate par_id {id} in predictions")));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Validation(format!(
                    "probability {p} for par_id {id} is outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            split,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, p)| *p).collect()
    }

    /// Labels in entry order; fails if any id has no label or labels cover other ids.
    pub fn aligned_labels(&self, labels: &HashMap<String, u8>) -> Result<Vec<u8>> {
        let missing: Vec<&str> = self.ids().filter(|id| !labels.contains_key(*id)).collect();
        if !missing.is_empty() || labels.len() != self.len() {
            let ours: HashSet<&str> = self.ids().collect();
            let mut diff: Vec<&str> = labels
                .keys()
                .map(String::as_str)
                .filter(|id| !ours.contains(id))
                .chain(missing)
                .collect();
            diff.sort_unstable();
            return Err(Error::Alignment(format!(
                "{} predictions and labels differ on ids: {}",
                self.source_id,
                diff.join(", ")
            )));
        }
        Ok(self.ids().map(|id| labels[id]).collect())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("par_id\tp_positive\n");
        for (id, p) in &self.entries {
            out.push_str(id);
            out.push('\t');
            out.push_str(&format_probability(*p));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_tsv().as_bytes())
    }

    pub fn read_tsv(path: &Path, source_id: &str, split: SplitName) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "par_id\tp_positive")) => {}
            _ => {
                return Err(Error::format(
                    path,
                    "expected header \"par_id\\tp_positive\"",
                ))
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (id, p) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected two tab-separated columns".into()))?;
            let p: f64 = p
                .parse()
                .map_err(|e| parse_err(format!("bad probability {p:?}: {e}")))?;
            entries.push((id.to_string(), p));
        }
        Self::new(source_id, split, entries)
    }
}

/// Per-id arithmetic mean of member probabilities, in canonical par_id order.
///
/// Member values are summed in sorted order so the result does not depend on
/// member order.
pub fn average(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Validation("cannot average zero prediction sets".into()))?;
    let reference: HashSet<&str> = first.ids().collect();
    for s in &sets[1..] {
        if s.split != first.split {
            return Err(Error::Alignment(format!(
                "{} is on split {} but {} is on split {}",
                s.source_id, s.split, first.source_id, first.split
            )));
        }
        let other: HashSet<&str> = s.ids().collect();
        if other != reference {
            let mut diff: Vec<&str> = reference.symmetric_difference(&other).copied().collect();
            diff.sort_unstable();
            return Err(Error::Alignment(format!(
                "{} and {} differ on ids: {}",
                first.source_id,
                s.source_id,
                diff.join(", ")
            )));
        }
    }
    let lookups: Vec<HashMap<&str, f64>> = sets
        .iter()
        .map(|s| s.entries.iter().map(|(id, p)| (id.as_str(), *p)).collect())
        .collect();
    let mut ids: Vec<&str> = reference.into_iter().collect();
    ids.sort_by(|a, b| par_id_cmp(a, b));
    let n = sets.len() as f64;
    let mut values = Vec::with_capacity(sets.len());
    let entries = ids
        .into_iter()
        .map(|id| {
            values.clear();
            values.extend(lookups.iter().map(|m| m[id]));
            values.sort_by(f64::total_cmp);
            let lo = values[0];
            let hi = values[values.len() - 1];
            let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
            (id.to_string(), mean)
        })
        .collect();
    let source_id = sets
        .iter()
        .map(|s| s.source_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    Ok(PredictionSet {
        source_id,
        split: first.split,
        entries,
    })
}

/// 1 iff `p_positive >= threshold`.
pub fn apply_threshold(set: &PredictionSet, threshold: f64) -> Vec<(String, u8)> {
    set.entries
        .iter()
        .map(|(id, p)| (id.clone(), u8::from(*p >= threshold)))
        .collect()
}

/// Thresholds `0.05, 0.10, ..., 0.95`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Best grid threshold by positive-class F1 for aligned probabilities and labels.
/// Ties go to the smallest threshold.
pub fn optimize_threshold_aligned(probs: &[f64], labels: &[u8], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Validation("threshold grid is empty".into()));
    }
    if !labels.contains(&1) {
        return Err(Error::Validation(
            "labels contain no positive examples, so F1 is undefined at every threshold; \
             use a development split that includes PCL paragraphs"
                .into(),
        ));
    }
    let mut thresholds = grid.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let mut best = (thresholds[0], f64::NEG_INFINITY);
    let mut preds = vec![0u8; probs.len()];
    for &t in &thresholds {
        for (out, p) in preds.iter_mut().zip(probs) {
            *out = u8::from(*p >= t);
        }
        let f1 = MetricsReport::from_aligned(&preds, labels).f1;
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

pub fn optimize_threshold(
    set: &PredictionSet,
    labels: &HashMap<String, u8>,
    grid: &[f64],
) -> Result<(f64, f64)> {
    let gold = set.aligned_labels(labels)?;
    optimize_threshold_aligned(&set.probabilities(), &gold, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub ensemble_id: String,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl EnsembleSpec {
    pub fn new(ensemble_id: impl Into<String>, members: Vec<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("an ensemble needs at least one member".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = members.iter().find(|m| !seen.insert(m.as_str())) {
            return Err(Error::Validation(format!("duplicate ensemble member {dup}")));
        }
        Ok(Self {
            ensemble_id: ensemble_id.into(),
            members,
            threshold: None,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Registry records ranked by descending dev F1, ties by run_id.
pub fn rank_records(
    registry: &[TrainedModelRecord],
    family: Option<Family>,
) -> Vec<&TrainedModelRecord> {
    let mut ranked: Vec<&TrainedModelRecord> = registry
        .iter()
        .filter(|r| family.is_none_or(|f| r.spec.family() == f))
        .collect();
    ranked.sort_by(|a, b| {
        b.best_dev_f1
            .total_cmp(&a.best_dev_f1)
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    ranked
}

/// The `n` best runs by dev F1, optionally restricted to one family.
pub fn select_top_n(
    registry: &[TrainedModelRecord],
    n: usize,
    family: Option<Family>,
) -> Result<EnsembleSpec> {
    let ranked = rank_records(registry, family);
    let scope = family.map_or("registry".to_string(), |f| format!("{f} runs"));
    if n == 0 {
        return Err(Error::Selection("ensemble size must be at least 1".into()));
    }
    if ranked.len() < n {
        return Err(Error::Selection(format!(
            "requested top {n} but only {} {scope} available",
            ranked.len()
        )));
    }
    let members = ranked[..n].iter().map(|r| r.run_id.clone()).collect();
    EnsembleSpec::new(format!("top{n}"), members)
}

/// One top-N rule of an ensemble definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRule {
    #[serde(default)]
    pub family: Option<Family>,
    pub top: usize,
}

/// Concatenates the members chosen by each rule, skipping repeats.
pub fn compose_ensemble(
    ensemble_id: &str,
    registry: &[TrainedModelRecord],
    rules: &[MemberRule],
) -> Result<EnsembleSpec> {
    let mut members: Vec<String> = Vec::new();
    for rule in rules {
        for m in select_top_n(registry, rule.top, rule.family)?.members {
            if !members.contains(&m) {
                members.push(m);
            }
        }
    }
    if members.is_empty() {
        return Err(Error::Selection(format!("ensemble {ensemble_id} has no member rules")));
    }
    EnsembleSpec::new(ensemble_id, members)
}

/// Collects member prediction sets from a run-id map.
pub fn member_sets(
    spec: &EnsembleSpec,
    predictions: &HashMap<String, PredictionSet>,
) -> Result<Vec<PredictionSet>> {
    spec.members
        .iter()
        .map(|m| {
            predictions
                .get(m)
                .cloned()
                .ok_or_else(|| Error::Selection(format!("no predictions found for run {m}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub grid: Vec<f64>,
    /// Reuse one threshold for every size instead of re-tuning per size.
    pub frozen_threshold: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            grid: default_threshold_grid(),
            frozen_threshold: None,
        }
    }
}

/// Metrics of the top-n average for every n in `1..=n_max`.
pub fn ensemble_sweep(
    registry: &[TrainedModelRecord],
    dev_predictions: &HashMap<String, PredictionSet>,
    n_max: usize,
    labels: &HashMap<String, u8>,
    options: &SweepOptions,
) -> Result<Vec<SweepPoint>> {
    let ranked = rank_records(registry, None);
    if n_max == 0 || ranked.len() < n_max {
        return Err(Error::Selection(format!(
            "sweep up to {n_max} members needs that many runs, registry has {}",
            ranked.len()
        )));
    }
    let all = member_sets(
        &EnsembleSpec::new(
            "sweep",
            ranked[..n_max].iter().map(|r| r.run_id.clone()).collect(),
        )?,
        dev_predictions,
    )?;
    (1..=n_max)
        .map(|n| {
            let avg = average(&all[..n])?;
            let gold = avg.aligned_labels(labels)?;
            let probs = avg.probabilities();
            let threshold = match options.frozen_threshold {
                Some(t) => t,
                None => optimize_threshold_aligned(&probs, &gold, &options.grid)?.0,
            };
            let preds: Vec<u8> = probs.iter().map(|p| u8::from(*p >= threshold)).collect();
            let m = MetricsReport::from_aligned(&preds, &gold);
            Ok(SweepPoint {
                n,
                threshold,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
        })
        .collect()
}

/// `n,precision,recall,f1` rows.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("n,precision,recall,f1\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.n, p.precision, p.recall, p.f1));
    }
    out
}

pub fn write_sweep(points: &[SweepPoint], csv_path: &Path, svg_path: &Path) -> Result<()> {
    write_bytes(csv_path, sweep_csv(points).as_bytes())?;
    let series: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.f1)).collect();
    let svg = plot::line_chart_svg(&series, "Ensemble size sweep", "ensemble size", "dev F1");
    write_bytes(svg_path, svg.as_bytes())
}
