//! Average member probabilities, tune one decision threshold on dev, score it.

use std::collections::HashMap;

use pcl_ensemble::corpus::SplitName;
use pcl_ensemble::ensemble::{apply_threshold, average, default_threshold_grid, optimize_threshold, PredictionSet};
use pcl_ensemble::evaluation::prf1;

fn set(name: &str, probs: &[f64]) -> PredictionSet {
    let entries = probs.iter().enumerate().map(|(i, p)| ((i + 1).to_string(), *p)).collect();
    PredictionSet::new(name, SplitName::Dev, entries).expect("valid probabilities")
}

fn main() -> pcl_ensemble::Result<()> {
    let labels: HashMap<String, u8> = [1, 0, 1, 0, 0, 1, 0, 0]
        .iter()
        .enumerate()
        .map(|(i, y)| ((i + 1).to_string(), *y))
        .collect();
    let members = [
        set("roberta-s3", &[0.81, 0.40, 0.33, 0.12, 0.52, 0.64, 0.08, 0.30]),
        set("roberta-s7", &[0.70, 0.22, 0.41, 0.20, 0.38, 0.55, 0.11, 0.45]),
        set("cnn-glove", &[0.35, 0.30, 0.28, 0.05, 0.31, 0.26, 0.22, 0.10]),
    ];
    let grid = default_threshold_grid();
    for m in &members {
        let (t, f1) = optimize_threshold(m, &labels, &grid)?;
        println!("{:<11} best threshold {t:.2}  F1 {f1:.3}", m.source_id);
    }

    let avg = average(&members)?;
    let (t, _) = optimize_threshold(&avg, &labels, &grid)?;
    let m = prf1(&apply_threshold(&avg, t), &labels)?;
    println!(
        "ensemble    best threshold {t:.2}  P {:.3} R {:.3} F1 {:.3}",
        m.precision, m.recall, m.f1
    );
    print!("{}", avg.to_tsv());
    Ok(())
}
