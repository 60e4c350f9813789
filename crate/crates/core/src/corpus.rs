//! Paragraph corpus ingestion, label binarization and train/dev/test splits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LABEL_CUTOFF: u8 = 2;
pub const MAX_RAW_LABEL: u8 = 4;

/// One paragraph of the task corpus.
///
/// Labels are optional so that blind test files can flow through the same
/// pipeline; `binary_label` is present exactly when `raw_label` is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub par_id: String,
    pub art_id: String,
    pub keyword: String,
    pub country_code: String,
    pub text: String,
    pub raw_label: Option<u8>,
    pub binary_label: Option<u8>,
}

impl ParagraphRecord {
    pub fn is_pcl(&self) -> Option<bool> {
        self.binary_label.map(|l| l == 1)
    }
}

/// Returns 1 (PCL) iff `raw >= cutoff`.
pub fn binarize_label(raw: u8, cutoff: u8) -> Result<u8> {
    if raw > MAX_RAW_LABEL {
        return Err(Error::Validation(format!(
            "raw label {raw} outside 0..={MAX_RAW_LABEL}"
        )));
    }
    if !(1..=MAX_RAW_LABEL).contains(&cutoff) {
        return Err(Error::Validation(format!(
            "label cutoff {cutoff} outside 1..={MAX_RAW_LABEL}"
        )));
    }
    Ok(u8::from(raw >= cutoff))
}

/// Ordering used for par_ids: numeric ids by value, then everything else lexicographically.
pub fn par_id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeaderMode {
    Present,
    Absent,
    /// Treat the first row as a header when its label cell is not an integer.
    #[default]
    Auto,
}

/// Column positions of the six logical fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsvSchema {
    pub par_id: usize,
    pub art_id: usize,
    pub keyword: usize,
    pub country_code: usize,
    pub text: usize,
    /// `None` for unlabeled files; written as `label = "none"` in config files.
    #[serde(with = "label_column")]
    pub label: Option<usize>,
    /// Expected number of tab-separated cells per row.
    pub columns: usize,
    pub header: HeaderMode,
    /// Preamble lines skipped before the header/data.
    pub skip_lines: usize,
}

mod label_column {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Index(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(i) => s.serialize_u64(*i as u64),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            Some(Repr::Index(i)) => Ok(Some(i)),
            Some(Repr::Word(w)) if w == "none" => Ok(None),
            Some(Repr::Word(w)) => Err(serde::de::Error::custom(format!(
                "expected a column index or \"none\", got {w:?}"
            ))),
            None => Ok(None),
        }
    }
}

impl Default for TsvSchema {
    fn default() -> Self {
        Self {
            par_id: 0,
            art_id: 1,
            keyword: 2,
            country_code: 3,
            text: 4,
            label: Some(5),
            columns: 6,
            header: HeaderMode::Auto,
            skip_lines: 0,
        }
    }
}

impl TsvSchema {
    fn max_index(&self) -> usize {
        [
            self.par_id,
            self.art_id,
            self.keyword,
            self.country_code,
            self.text,
            self.label.unwrap_or(0),
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLoad {
    pub records: Vec<ParagraphRecord>,
    /// Rows dropped because their text was empty after trimming.
    pub dropped_empty: usize,
}

pub fn load_task_tsv(path: &Path, schema: &TsvSchema, cutoff: u8) -> Result<CorpusLoad> {
    if schema.columns <= schema.max_index() {
        return Err(Error::config(
            "schema.columns",
            format!(
                "{} columns cannot hold column index {}",
                schema.columns,
                schema.max_index()
            ),
        ));
    }
    binarize_label(0, cutoff)?;
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    let mut dropped_empty = 0;
    let mut seen = HashSet::new();
    let mut first_row = true;
    for (idx, raw_line) in content.lines().enumerate().skip(schema.skip_lines) {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let is_first = std::mem::replace(&mut first_row, false);
        if is_first {
            let header = match schema.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => match schema.label {
                    Some(col) => cells
                        .get(col)
                        .is_some_and(|c| !c.trim().is_empty() && c.trim().parse::<i64>().is_err()),
                    None => cells.get(schema.par_id).is_some_and(|c| c.trim() == "par_id"),
                },
            };
            if header {
                continue;
            }
        }
        if cells.len() != schema.columns {
            return Err(parse_err(
                line_no,
                format!("expected {} columns, found {}", schema.columns, cells.len()),
            ));
        }
        let (raw_label, binary_label) = match schema.label.map(|c| cells[c].trim()) {
            None | Some("") => (None, None),
            Some(cell) => {
                let raw: u8 = cell
                    .parse()
                    .ok()
                    .filter(|v| *v <= MAX_RAW_LABEL)
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "{}:{line_no}: label {cell:?} outside 0..={MAX_RAW_LABEL}",
                            path.display()
                        ))
                    })?;
                (Some(raw), Some(binarize_label(raw, cutoff)?))
            }
        };
        let text = cells[schema.text].trim();
        if text.is_empty() {
            dropped_empty += 1;
            continue;
        }
        let par_id = cells[schema.par_id].trim().to_string();
        if par_id.is_empty() {
            return Err(parse_err(line_no, "empty par_id".into()));
        }
        if !seen.insert(par_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{line_no}: duplicate par_id {par_id:?}",
                path.display()
            )));
        }
        records.push(ParagraphRecord {
            par_id,
            art_id: cells[schema.art_id].trim().to_string(),
            keyword: cells[schema.keyword].trim().to_string(),
            country_code: cells[schema.country_code].trim().to_string(),
            text: text.to_string(),
            raw_label,
            binary_label,
        });
    }
    if dropped_empty > 0 {
        log::warn!(
            "{}: dropped {dropped_empty} rows with empty text",
            path.display()
        );
    }
    records.sort_by(|a, b| par_id_cmp(&a.par_id, &b.par_id));
    Ok(CorpusLoad {
        records,
        dropped_empty,
    })
}

/// Writes records in the default column order with a header row.
pub fn write_task_tsv(path: &Path, records: &[ParagraphRecord]) -> Result<()> {
    let mut out = String::from("par_id\tart_id\tkeyword\tcountry_code\ttext\tlabel\n");
    for r in records {
        for field in [&r.par_id, &r.art_id, &r.keyword, &r.country_code, &r.text] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::Validation(format!(
                    "par_id {:?}: embedded tab or newline cannot be written to TSV",
                    r.par_id
                )));
            }
        }
        let label = r.raw_label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.par_id, r.art_id, r.keyword, r.country_code, r.text, label
        ));
    }
    write_bytes(path, out.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Reads a split file: one par_id per line, blank lines ignored.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub name: SplitName,
    pub records: Vec<ParagraphRecord>,
}

impl DataSplit {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.par_id.as_str())
    }

    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().all(|r| r.binary_label.is_some())
    }

    /// Binary labels keyed by par_id; fails if any record is unlabeled.
    pub fn labels(&self) -> Result<HashMap<String, u8>> {
        self.records
            .iter()
            .map(|r| {
                r.binary_label
                    .map(|l| (r.par_id.clone(), l))
                    .ok_or_else(|| {
                        Error::MissingLabels(format!(
                            "{} split: par_id {:?} has no label",
                            self.name, r.par_id
                        ))
                    })
            })
            .collect()
    }

    /// Binary labels in record order.
    pub fn label_vec(&self) -> Result<Vec<u8>> {
        self.records
            .iter()
            .map(|r| {
                r.binary_label.ok_or_else(|| {
                    Error::MissingLabels(format!("{} split has unlabeled records", self.name))
                })
            })
            .collect()
    }

    pub fn positive_rate(&self) -> Option<f64> {
        let labels = self.label_vec().ok()?;
        if labels.is_empty() {
            return None;
        }
        Some(labels.iter().map(|&l| f64::from(l)).sum::<f64>() / labels.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitConfig {
    /// Explicit par_id lists. When `train` is omitted, every record not
    /// listed for dev/test goes to train.
    Explicit {
        train: Option<Vec<String>>,
        dev: Vec<String>,
        #[serde(default)]
        test: Option<Vec<String>>,
    },
    /// Per-class random assignment with fixed fractions.
    Stratified {
        dev_fraction: f64,
        #[serde(default)]
        test_fraction: f64,
        seed: u64,
    },
}

pub fn make_splits(
    records: &[ParagraphRecord],
    config: &SplitConfig,
) -> Result<BTreeMap<SplitName, DataSplit>> {
    let mut out = BTreeMap::new();
    match config {
        SplitConfig::Explicit { train, dev, test } => {
            let by_id: HashMap<&str, &ParagraphRecord> =
                records.iter().map(|r| (r.par_id.as_str(), r)).collect();
            let mut assigned: HashSet<&str> = HashSet::new();
            let mut missing = Vec::new();
            let mut lists: Vec<(SplitName, &Vec<String>)> = vec![(SplitName::Dev, dev)];
            if let Some(test) = test {
                lists.push((SplitName::Test, test));
            }
            if let Some(train) = train {
                lists.push((SplitName::Train, train));
            }
            for (name, ids) in lists {
                let mut split = Vec::with_capacity(ids.len());
                for id in ids {
                    match by_id.get(id.as_str()) {
                        Some(r) => {
                            if !assigned.insert(r.par_id.as_str()) {
                                return Err(Error::Validation(format!(
                                    "par_id {id:?} assigned to more than one split"
                                )));
                            }
                            split.push((*r).clone());
                        }
                        None => missing.push(id.clone()),
                    }
                }
                out.insert(
                    name,
                    DataSplit {
                        name,
                        records: split,
                    },
                );
            }
            if !missing.is_empty() {
                return Err(Error::Validation(format!(
                    "split ids absent from corpus: {}",
                    missing.join(", ")
                )));
            }
            if train.is_none() {
                let rest = records
                    .iter()
                    .filter(|r| !assigned.contains(r.par_id.as_str()))
                    .cloned()
                    .collect();
                out.insert(
                    SplitName::Train,
                    DataSplit {
                        name: SplitName::Train,
                        records: rest,
                    },
                );
            } else {
                let unassigned = records.len() - assigned.len();
                if unassigned > 0 {
                    log::warn!("{unassigned} records are not listed in any split file");
                }
            }
        }
        SplitConfig::Stratified {
            dev_fraction,
            test_fraction,
            seed,
        } => {
            let (dev_fraction, test_fraction) = (*dev_fraction, *test_fraction);
            if !(0.0..1.0).contains(&dev_fraction)
                || !(0.0..1.0).contains(&test_fraction)
                || dev_fraction + test_fraction >= 1.0
            {
                return Err(Error::config(
                    "splits",
                    "fractions must be in [0, 1) and sum to less than 1",
                ));
            }
            let mut sorted: Vec<&ParagraphRecord> = records.iter().collect();
            sorted.sort_by(|a, b| par_id_cmp(&a.par_id, &b.par_id));
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut buckets: BTreeMap<SplitName, Vec<ParagraphRecord>> = BTreeMap::new();
            for class in [0u8, 1] {
                let mut members = Vec::new();
                for r in &sorted {
                    match r.binary_label {
                        Some(l) if l == class => members.push(*r),
                        Some(_) => {}
                        None => {
                            return Err(Error::MissingLabels(format!(
                                "stratified split needs labels; par_id {:?} is unlabeled",
                                r.par_id
                            )))
                        }
                    }
                }
                members.shuffle(&mut rng);
                let n = members.len() as f64;
                let n_dev = (n * dev_fraction).round() as usize;
                let n_test = ((n * test_fraction).round() as usize).min(members.len() - n_dev);
                for (i, r) in members.into_iter().enumerate() {
                    let name = if i < n_dev {
                        SplitName::Dev
                    } else if i < n_dev + n_test {
                        SplitName::Test
                    } else {
                        SplitName::Train
                    };
                    buckets.entry(name).or_default().push(r.clone());
                }
            }
            for name in SplitName::ALL {
                if name == SplitName::Test && test_fraction == 0.0 {
                    continue;
                }
                let mut records = buckets.remove(&name).unwrap_or_default();
                records.sort_by(|a, b| par_id_cmp(&a.par_id, &b.par_id));
                out.insert(name, DataSplit { name, records });
            }
        }
    }
    Ok(out)
}
