//! Per-keyword false positive / false negative counts and ranked error listings.

use pcl_ensemble::corpus::SplitName;
use pcl_ensemble::ensemble::{apply_threshold, PredictionSet};
use pcl_ensemble::evaluation::{error_by_keyword, export_errors, ErrorKind};
use pcl_ensemble::synthetic::separable_records;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pcl_ensemble::Result<()> {
    let records = separable_records(40, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let entries = records
        .iter()
        .map(|r| {
            let y = f64::from(r.binary_label.unwrap_or(0));
            (r.par_id.clone(), (0.25 + 0.4 * y + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0))
        })
        .collect();
    let set = PredictionSet::new("demo", SplitName::Dev, entries)?;
    let labels = records.iter().map(|r| (r.par_id.clone(), r.binary_label.unwrap_or(0))).collect();
    let threshold = 0.45;

    let breakdown = error_by_keyword(&apply_threshold(&set, threshold), &labels, &records)?;
    print!("{}", breakdown.to_csv());

    for kind in [ErrorKind::Fp, ErrorKind::Fn] {
        let listing = export_errors(&set, threshold, &labels, &records, kind)?;
        println!("{kind:?}: {} errors", listing.len());
        for e in listing.iter().take(3) {
            println!("  {} {:<10} p={:.3}  {}", e.par_id, e.keyword, e.p_positive, e.text);
        }
    }
    Ok(())
}
