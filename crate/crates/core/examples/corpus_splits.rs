//! Load a task TSV, binarize labels and carve stratified train/dev/test splits.

use pcl_ensemble::corpus::{binarize_label, load_task_tsv, make_splits, write_task_tsv, SplitConfig, TsvSchema};
use pcl_ensemble::synthetic::separable_records;

fn main() -> pcl_ensemble::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("paragraphs.tsv");
    write_task_tsv(&path, &separable_records(60, 4))?;

    let load = load_task_tsv(&path, &TsvSchema::default(), 2)?;
    println!("{} records, {} empty rows dropped", load.records.len(), load.dropped_empty);
    for raw in 0..=4 {
        println!("raw label {raw} -> {}", binarize_label(raw, 2)?);
    }

    let splits = make_splits(
        &load.records,
        &SplitConfig::Stratified {
            dev_fraction: 0.2,
            test_fraction: 0.2,
            seed: 7,
        },
    )?;
    for (name, split) in &splits {
        println!(
            "{name:>5}: {:3} paragraphs, positive rate {:.2}",
            split.len(),
            split.positive_rate().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
