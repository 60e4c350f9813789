//! Positive-class metrics, per-keyword error slices and misclassification listings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_bytes, ParagraphRecord};
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};

/// Precision, recall and F1 for the PCL class plus the confusion counts.
///
/// A metric whose denominator is zero is reported as 0 and `zero_division` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub zero_division: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // 2PR/(P+R) written over counts so equal ratios compare equal bit-for-bit.
        let f1 = if tp == 0 { None } else { ratio(2 * tp, 2 * tp + fp + fn_) };
        Self {
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            tp,
            fp,
            fn_,
            tn,
            zero_division: precision.is_none() || recall.is_none() || f1.is_none(),
        }
    }

    /// Metrics for aligned prediction/label slices.
    pub fn from_aligned(predictions: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predictions.len(), labels.len());
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_alignment<'a>(
    predicted: impl Iterator<Item = &'a str>,
    expected: impl Iterator<Item = &'a str>,
    what: &str,
) -> Result<()> {
    let a: HashSet<&str> = predicted.collect();
    let b: HashSet<&str> = expected.collect();
    if a == b {
        return Ok(());
    }
    let mut diff: Vec<&str> = a.symmetric_difference(&b).copied().collect();
    diff.sort_unstable();
    let shown = diff.iter().take(20).copied().collect::<Vec<_>>().join(", ");
    Err(Error::Alignment(format!(
        "predictions and {what} differ on {} ids: {shown}{}",
        diff.len(),
        if diff.len() > 20 { ", ..." } else { "" }
    )))
}

/// Confusion-based metrics for binary predictions keyed by par_id.
pub fn prf1(predictions: &[(String, u8)], labels: &HashMap<String, u8>) -> Result<MetricsReport> {
    check_alignment(
        predictions.iter().map(|(id, _)| id.as_str()),
        labels.keys().map(String::as_str),
        "labels",
    )?;
    let (preds, gold): (Vec<u8>, Vec<u8>) =
        predictions.iter().map(|(id, p)| (*p, labels[id])).unzip();
    Ok(MetricsReport::from_aligned(&preds, &gold))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordErrors {
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub total_pcl: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub per_keyword: BTreeMap<String, KeywordErrors>,
    pub global: KeywordErrors,
}

impl ErrorBreakdown {
    /// `keyword,fp,fn,total_pcl,total` rows sorted by keyword, then a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("keyword,fp,fn,total_pcl,total\n");
        let rows = self
            .per_keyword
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("TOTAL", &self.global)));
        for (k, v) in rows {
            out.push_str(&format!("{k},{},{},{},{}\n", v.fp, v.fn_, v.total_pcl, v.total));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_csv().as_bytes())
    }
}

fn record_index<'r>(
    predictions: impl Iterator<Item = &'r str>,
    records: &'r [ParagraphRecord],
) -> Result<HashMap<&'r str, &'r ParagraphRecord>> {
    let by_id: HashMap<&str, &ParagraphRecord> =
        records.iter().map(|r| (r.par_id.as_str(), r)).collect();
    let unknown: Vec<&str> = predictions.filter(|id| !by_id.contains_key(id)).collect();
    if !unknown.is_empty() {
        return Err(Error::Alignment(format!(
            "par_ids without a record: {}",
            unknown.join(", ")
        )));
    }
    Ok(by_id)
}

/// Per-keyword false positive / false negative counts over the predicted paragraphs.
pub fn error_by_keyword(
    predictions: &[(String, u8)],
    labels: &HashMap<String, u8>,
    records: &[ParagraphRecord],
) -> Result<ErrorBreakdown> {
    check_alignment(
        predictions.iter().map(|(id, _)| id.as_str()),
        labels.keys().map(String::as_str),
        "labels",
    )?;
    let by_id = record_index(predictions.iter().map(|(id, _)| id.as_str()), records)?;
    let mut out = ErrorBreakdown::default();
    for (id, pred) in predictions {
        let label = labels[id];
        let keyword = by_id[id.as_str()].keyword.clone();
        for slot in [out.per_keyword.entry(keyword).or_default(), &mut out.global] {
            slot.total += 1;
            if label == 1 {
                slot.total_pcl += 1;
                if *pred == 0 {
                    slot.fn_ += 1;
                }
            } else if *pred == 1 {
                slot.fp += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Fp,
    Fn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorListing {
    pub par_id: String,
    pub keyword: String,
    pub p_positive: f64,
    pub text: String,
}

/// Misclassified paragraphs of one kind, most confident mistakes first
/// (descending distance from the threshold, ties by par_id).
pub fn export_errors(
    set: &PredictionSet,
    threshold: f64,
    labels: &HashMap<String, u8>,
    records: &[ParagraphRecord],
    kind: ErrorKind,
) -> Result<Vec<ErrorListing>> {
    check_alignment(set.ids(), labels.keys().map(String::as_str), "labels")?;
    let by_id = record_index(set.ids(), records)?;
    let mut out: Vec<ErrorListing> = set
        .entries
        .iter()
        .filter(|(id, p)| {
            let predicted = *p >= threshold;
            let gold = labels[id] == 1;
            match kind {
                ErrorKind::Fp => predicted && !gold,
                ErrorKind::Fn => !predicted && gold,
            }
        })
        .map(|(id, p)| {
            let r = by_id[id.as_str()];
            ErrorListing {
                par_id: id.clone(),
                keyword: r.keyword.clone(),
                p_positive: *p,
                text: r.text.clone(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let da = (a.p_positive - threshold).abs();
        let db = (b.p_positive - threshold).abs();
        db.total_cmp(&da)
            .then_with(|| crate::corpus::par_id_cmp(&a.par_id, &b.par_id))
    });
    Ok(out)
}

/// TSV with header `par_id\tkeyword\tp_positive\ttext`.
pub fn write_error_listing(path: &Path, listing: &[ErrorListing]) -> Result<()> {
    let mut out = String::from("par_id\tkeyword\tp_positive\ttext\n");
    for e in listing {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.par_id,
            e.keyword,
            crate::ensemble::format_probability(e.p_positive),
            e.text
        ));
    }
    write_bytes(path, out.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub runs: usize,
}

/// Unweighted mean of each metric across runs (not pooled counts).
pub fn macro_average(reports: &[MetricsReport]) -> Result<AveragedMetrics> {
    if reports.is_empty() {
        return Err(Error::Validation("macro_average needs at least one report".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(AveragedMetrics {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        runs: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(v: &[(&str, u8)]) -> Vec<(String, u8)> {
        v.iter().map(|(id, p)| (id.to_string(), *p)).collect()
    }

    fn labels(v: &[(&str, u8)]) -> HashMap<String, u8> {
        v.iter().map(|(id, p)| (id.to_string(), *p)).collect()
    }

    fn rec(id: &str, keyword: &str) -> ParagraphRecord {
        ParagraphRecord {
            par_id: id.into(),
            art_id: "a".into(),
            keyword: keyword.into(),
            country_code: "gb".into(),
            text: format!("paragraph {id}"),
            raw_label: None,
            binary_label: None,
        }
    }

    #[test]
    fn perfect_predictor() {
        let l = labels(&[("1", 1), ("2", 0), ("3", 1)]);
        let r = prf1(&preds(&[("1", 1), ("2", 0), ("3", 1)]), &l).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(!r.zero_division);
        assert_eq!(r.total(), 3);
    }

    #[test]
    fn zero_division_is_flagged() {
        let l = labels(&[("1", 0), ("2", 0)]);
        let r = prf1(&preds(&[("1", 0), ("2", 0)]), &l).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(r.zero_division);
    }

    #[test]
    fn misaligned_ids_are_reported() {
        let l = labels(&[("1", 0), ("2", 1)]);
        let err = prf1(&preds(&[("1", 0), ("3", 1)]), &l).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn keyword_breakdown_fixture() {
        let records = vec![rec("1", "x"), rec("2", "x"), rec("3", "y"), rec("4", "y")];
        let l = labels(&[("1", 0), ("2", 1), ("3", 1), ("4", 0)]);
        let p = preds(&[("1", 1), ("2", 1), ("3", 0), ("4", 0)]);
        let b = error_by_keyword(&p, &l, &records).unwrap();
        assert_eq!(b.per_keyword["x"], KeywordErrors { fp: 1, fn_: 0, total_pcl: 1, total: 2 });
        assert_eq!(b.per_keyword["y"], KeywordErrors { fp: 0, fn_: 1, total_pcl: 1, total: 2 });
        assert_eq!(b.global, KeywordErrors { fp: 1, fn_: 1, total_pcl: 2, total: 4 });
        assert_eq!(
            b.to_csv(),
            "keyword,fp,fn,total_pcl,total\nx,1,0,1,2\ny,0,1,1,2\nTOTAL,1,1,2,4\n"
        );
    }

    #[test]
    fn export_lists_single_false_positive() {
        let records = vec![rec("1", "x"), rec("2", "x"), rec("3", "y")];
        let l = labels(&[("1", 0), ("2", 1), ("3", 0)]);
        let set = PredictionSet::new(
            "m",
            crate::corpus::SplitName::Dev,
            vec![("1".into(), 0.9), ("2".into(), 0.8), ("3".into(), 0.1)],
        )
        .unwrap();
        let fp = export_errors(&set, 0.5, &l, &records, ErrorKind::Fp).unwrap();
        assert_eq!(fp.len(), 1);
        assert_eq!(fp[0].par_id, "1");
        assert!(export_errors(&set, 0.5, &l, &records, ErrorKind::Fn).unwrap().is_empty());
    }

    #[test]
    fn fn_listing_empty_without_positives() {
        let records = vec![rec("1", "x"), rec("2", "x")];
        let l = labels(&[("1", 0), ("2", 0)]);
        let set = PredictionSet::new(
            "m",
            crate::corpus::SplitName::Dev,
            vec![("1".into(), 0.2), ("2".into(), 0.7)],
        )
        .unwrap();
        assert!(export_errors(&set, 0.5, &l, &records, ErrorKind::Fn).unwrap().is_empty());
    }

    #[test]
    fn macro_average_examples() {
        let a = MetricsReport::from_counts(1, 1, 3, 5);
        let avg = macro_average(&[a, a]).unwrap();
        assert_eq!((avg.precision, avg.recall, avg.f1), (a.precision, a.recall, a.f1));

        let mut r1 = a;
        let mut r2 = a;
        r1.f1 = 0.2;
        r2.f1 = 0.4;
        assert!((macro_average(&[r1, r2]).unwrap().f1 - 0.3).abs() < 1e-15);
        assert!(macro_average(&[]).is_err());
    }
}
