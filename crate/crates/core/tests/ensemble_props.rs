mod common;

use std::collections::HashMap;

use common::*;
use pcl_ensemble::corpus::{ParagraphRecord, SplitName};
use pcl_ensemble::ensemble::{
    apply_threshold, average, compose_ensemble, default_threshold_grid, ensemble_sweep,
    optimize_threshold, optimize_threshold_aligned, select_top_n, MemberRule, PredictionSet,
    SweepOptions,
};
use pcl_ensemble::evaluation::{error_by_keyword, prf1, MetricsReport};
use pcl_ensemble::models::Family;
use pcl_ensemble::Error;
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{}", 100 + i)).collect()
}

fn sets_from(matrix: &[Vec<f64>]) -> Vec<PredictionSet> {
    let ids = ids(matrix[0].len());
    matrix
        .iter()
        .enumerate()
        .map(|(m, row)| {
            let entries = ids.iter().cloned().zip(row.iter().copied()).collect();
            PredictionSet::new(format!("m{m}"), SplitName::Dev, entries).unwrap()
        })
        .collect()
}

prop_compose! {
    fn prob_matrix()(m in 1usize..8, n in 1usize..40)
        (rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, n), m)) -> Vec<Vec<f64>> {
        rows
    }
}

prop_compose! {
    fn scored_labels()(n in 1usize..60)
        (probs in prop::collection::vec(prop_oneof![0.0f64..=1.0, (0u32..=20).prop_map(|k| k as f64 / 20.0)], n),
         mut labels in prop::collection::vec(0u8..=1, n),
         pos in 0..n) -> (Vec<f64>, Vec<u8>) {
        labels[pos] = 1;
        (probs, labels)
    }
}

fn brute_force_best(probs: &[f64], labels: &[u8], grid: &[f64]) -> (f64, f64) {
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, y) in probs.iter().zip(labels) {
            match (*p >= t, *y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        best = match best {
            Some((bt, bf)) if bf > f1 || (bf == f1 && bt <= t) => Some((bt, bf)),
            _ => Some((t, f1)),
        };
    }
    best.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn average_matches_naive_mean(matrix in prob_matrix()) {
        let avg = average(&sets_from(&matrix)).unwrap();
        let lookup: HashMap<_, _> = avg.entries.iter().cloned().collect();
        for (i, id) in ids(matrix[0].len()).iter().enumerate() {
            let naive = matrix.iter().map(|r| r[i]).sum::<f64>() / matrix.len() as f64;
            let lo = matrix.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
            let hi = matrix.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
            let got = lookup[id];
            prop_assert!((got - naive).abs() <= 1e-12);
            prop_assert!(lo <= got && got <= hi);
        }
    }

    #[test]
    fn average_ignores_member_order(matrix in prob_matrix(), rot in 0usize..8) {
        let mut sets = sets_from(&matrix);
        let a = average(&sets).unwrap();
        let k = rot % sets.len();
        sets.rotate_left(k);
        sets.reverse();
        let b = average(&sets).unwrap();
        prop_assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn average_of_copies_is_identity(row in prop::collection::vec(0.0f64..=1.0, 1..40), copies in 1usize..6) {
        let matrix = vec![row; copies];
        let sets = sets_from(&matrix);
        let avg = average(&sets).unwrap();
        let mut expected = sets[0].entries.clone();
        expected.sort_by(|a, b| pcl_ensemble::corpus::par_id_cmp(&a.0, &b.0));
        prop_assert_eq!(avg.entries, expected);
    }

    #[test]
    fn optimized_threshold_matches_exhaustive_scan((probs, labels) in scored_labels()) {
        let grid = default_threshold_grid();
        let (t, f1) = optimize_threshold_aligned(&probs, &labels, &grid).unwrap();
        let (bt, bf) = brute_force_best(&probs, &labels, &grid);
        prop_assert_eq!(t, bt);
        prop_assert!((f1 - bf).abs() < 1e-12);
        let mut reversed = grid.clone();
        reversed.reverse();
        prop_assert_eq!(optimize_threshold_aligned(&probs, &labels, &reversed).unwrap(), (t, f1));
    }

    #[test]
    fn positives_shrink_as_threshold_rises(row in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let set = &sets_from(&[row])[0];
        let grid = default_threshold_grid();
        let counts: Vec<usize> = grid
            .iter()
            .map(|t| apply_threshold(set, *t).iter().filter(|(_, y)| *y == 1).count())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn prf1_matches_tally(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..80)) {
        let ids = ids(pairs.len());
        let preds: Vec<(String, u8)> = ids.iter().cloned().zip(pairs.iter().map(|p| p.0)).collect();
        let labels: HashMap<String, u8> = ids.iter().cloned().zip(pairs.iter().map(|p| p.1)).collect();
        let m = prf1(&preds, &labels).unwrap();
        let tp = pairs.iter().filter(|p| **p == (1, 1)).count();
        let fp = pairs.iter().filter(|p| **p == (1, 0)).count();
        let fn_ = pairs.iter().filter(|p| **p == (0, 1)).count();
        let tn = pairs.len() - tp - fp - fn_;
        prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        prop_assert!((m.precision - p).abs() < 1e-12);
        prop_assert!((m.recall - r).abs() < 1e-12);
        if p + r > 0.0 {
            prop_assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
        prop_assert!(m.f1 <= 2.0 * m.precision.min(m.recall) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.f1));
    }

    #[test]
    fn keyword_slices_sum_to_global(rows in prop::collection::vec((0u8..=1, 0u8..=1, 0usize..5), 1..80)) {
        let keywords = ["homeless", "refugee", "women", "poor-families", "in-need"];
        let ids = ids(rows.len());
        let records: Vec<ParagraphRecord> = ids
            .iter()
            .zip(&rows)
            .map(|(id, (_, y, k))| ParagraphRecord {
                par_id: id.clone(),
                art_id: format!("@@{id}"),
                keyword: keywords[*k].into(),
                country_code: "gb".into(),
                text: "text".into(),
                raw_label: Some(*y * 3),
                binary_label: Some(*y),
            })
            .collect();
        let preds: Vec<(String, u8)> = ids.iter().cloned().zip(rows.iter().map(|r| r.0)).collect();
        let labels: HashMap<String, u8> = ids.iter().cloned().zip(rows.iter().map(|r| r.1)).collect();
        let b = error_by_keyword(&preds, &labels, &records).unwrap();
        let m = prf1(&preds, &labels).unwrap();
        prop_assert_eq!(b.per_keyword.values().map(|v| v.fp).sum::<usize>(), b.global.fp);
        prop_assert_eq!(b.per_keyword.values().map(|v| v.fn_).sum::<usize>(), b.global.fn_);
        prop_assert_eq!(b.per_keyword.values().map(|v| v.total).sum::<usize>(), rows.len());
        prop_assert_eq!((b.global.fp, b.global.fn_, b.global.total_pcl), (m.fp, m.fn_, m.tp + m.fn_));
    }
}

#[test]
fn tied_thresholds_resolve_to_the_smallest() {
    let probs = [0.9, 0.8, 0.1];
    let labels = [1, 1, 0];
    let (t, f1) = optimize_threshold_aligned(&probs, &labels, &default_threshold_grid()).unwrap();
    assert_eq!((t, f1), (0.15, 1.0));
    let (t, _) = optimize_threshold_aligned(&[0.5, 0.5], &[1, 0], &[0.7, 0.3, 0.5]).unwrap();
    assert_eq!(t, 0.3);
}

#[test]
fn threshold_is_inclusive() {
    let set = &sets_from(&[vec![0.5, 0.49999]])[0];
    let preds = apply_threshold(set, 0.5);
    assert_eq!(preds[0].1, 1);
    assert_eq!(preds[1].1, 0);
}

#[test]
fn threshold_needs_a_positive_label() {
    let set = &sets_from(&[vec![0.2, 0.7]])[0];
    let labels: HashMap<String, u8> = set.ids().map(|id| (id.to_string(), 0)).collect();
    assert!(optimize_threshold(set, &labels, &default_threshold_grid()).is_err());
}

#[test]
fn misaligned_sets_are_rejected() {
    let a = PredictionSet::new("a", SplitName::Dev, vec![("1".into(), 0.2), ("2".into(), 0.4)]).unwrap();
    let b = PredictionSet::new("b", SplitName::Dev, vec![("1".into(), 0.2), ("3".into(), 0.4)]).unwrap();
    let err = average(&[a.clone(), b]).unwrap_err();
    assert!(matches!(err, Error::Alignment(_)));
    assert!(err.to_string().contains('2') && err.to_string().contains('3'));
    let c = PredictionSet { split: SplitName::Test, ..a.clone() };
    assert!(average(&[a, c]).is_err());
    assert!(PredictionSet::new("d", SplitName::Dev, vec![("1".into(), 1.5)]).is_err());
}

#[test]
fn top_n_ties_break_by_run_id() {
    let registry = vec![
        fake_record("D", Family::Cnn, 0.60),
        fake_record("C", Family::Cnn, 0.61),
        fake_record("B", Family::Cnn, 0.61),
        fake_record("A", Family::Cnn, 0.63),
    ];
    assert_eq!(select_top_n(&registry, 2, None).unwrap().members, ["A", "B"]);
    let err = select_top_n(&registry, 5, None).unwrap_err();
    assert!(matches!(err, Error::Selection(_)));
    assert!(err.to_string().contains('4'));
}

#[test]
fn composed_ensemble_mixes_families() {
    let registry = vec![
        fake_record("t1", Family::Transformer, 0.64),
        fake_record("t2", Family::Transformer, 0.62),
        fake_record("c1", Family::Cnn, 0.50),
        fake_record("c2", Family::Cnn, 0.55),
        fake_record("b1", Family::Bilstm, 0.52),
    ];
    let rules = [
        MemberRule { family: Some(Family::Transformer), top: 2 },
        MemberRule { family: Some(Family::Cnn), top: 1 },
        MemberRule { family: Some(Family::Bilstm), top: 1 },
        MemberRule { family: None, top: 1 },
    ];
    let spec = compose_ensemble("mixed", &registry, &rules).unwrap();
    assert_eq!(spec.members, ["t1", "t2", "c2", "b1"]);
    let err = compose_ensemble("too-big", &registry, &[MemberRule { family: Some(Family::Bilstm), top: 2 }]);
    assert!(matches!(err, Err(Error::Selection(_))));
}

#[test]
fn sweep_matches_independent_composition() {
    let (registry, preds, labels) = sweep_fixture();
    let points = ensemble_sweep(&registry, &preds, 10, &labels, &SweepOptions::default()).unwrap();
    assert_eq!(points.len(), 10);
    assert_eq!(points[0].f1, 1.0);
    assert!(points[9].f1 < 1.0);
    for p in &points {
        let spec = select_top_n(&registry, p.n, None).unwrap();
        let members: Vec<PredictionSet> = spec.members.iter().map(|m| preds[m].clone()).collect();
        let avg = average(&members).unwrap();
        let (t, f1) = optimize_threshold(&avg, &labels, &default_threshold_grid()).unwrap();
        let m: MetricsReport = prf1(&apply_threshold(&avg, t), &labels).unwrap();
        assert_eq!(p.threshold, t);
        assert!((p.f1 - f1).abs() < 1e-12 && (p.f1 - m.f1).abs() < 1e-12);
        assert!((p.precision - m.precision).abs() < 1e-12);
    }

    let frozen = SweepOptions { frozen_threshold: Some(0.5), ..Default::default() };
    let points = ensemble_sweep(&registry, &preds, 10, &labels, &frozen).unwrap();
    assert!(points.iter().all(|p| p.threshold == 0.5));
    assert!(ensemble_sweep(&registry, &preds, 11, &labels, &frozen).is_err());
}
