//! Small generated corpora for demos and tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::ParagraphRecord;

const FILLER: [&str; 16] = [
    "the", "council", "said", "that", "local", "people", "were", "given", "new", "homes", "after",
    "months", "of", "talks", "with", "officials",
];

/// Keywords cycled through the generated records.
pub const KEYWORDS: [&str; 4] = ["homeless", "refugee", "poor-families", "vulnerable"];

/// Positive class marker; negatives contain the same two words in reverse order.
pub const MARKER: (&str, &str) = ("poor", "souls");

/// `n` records, alternating positive/negative, where the ordered bigram
/// `poor souls` appears exactly in the positives and `souls poor` in the negatives.
/// Both classes share the same unigrams, so only word order separates them.
pub fn separable_records(n: usize, seed: u64) -> Vec<ParagraphRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = u8::from(i % 2 == 0);
            let len = rng.random_range(4..9);
            let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            let at = rng.random_range(0..=words.len());
            let pair = if label == 1 {
                [MARKER.0, MARKER.1]
            } else {
                [MARKER.1, MARKER.0]
            };
            words.splice(at..at, pair);
            ParagraphRecord {
                par_id: (i + 1).to_string(),
                art_id: format!("@@{}", 1000 + i / 3),
                keyword: KEYWORDS[i % KEYWORDS.len()].to_string(),
                country_code: "gb".into(),
                text: words.join(" "),
                raw_label: Some(if label == 1 { 3 } else { 0 }),
                binary_label: Some(label),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_order_matches_label() {
        for r in separable_records(20, 3) {
            let pos = r.text.contains("poor souls");
            assert_eq!(pos, r.binary_label == Some(1), "{}", r.text);
            assert_eq!(r.text.contains("souls poor"), !pos);
        }
    }
}
