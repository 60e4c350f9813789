//! Build a vocabulary and look it up in a pretrained vector file.

use pcl_ensemble::text_prep::{encode, read_pretrained, tokenize, EmbeddingFormat, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcl_ensemble::Result<()> {
    let texts = [
        "The homeless need our help and compassion.",
        "Refugees arrived at the border on Tuesday.",
        "Officials said the council would review the plan.",
    ];
    let vocab = Vocabulary::build(texts, 1);
    println!("vocabulary: {} tokens (hash {})", vocab.len(), &vocab.hash()[..12]);
    println!("tokens: {:?}", tokenize(texts[0]));
    println!("ids:    {:?}", encode(&tokenize(texts[0]), &vocab, 12));

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("vectors.txt");
    std::fs::write(
        &path,
        "4 3\nthe 0.1 0.2 0.3\nHomeless 0.4 0.5 0.6\nborder -0.1 0.0 0.2\nunused 1 1 1\n",
    )
    .expect("write vectors");

    let rows = read_pretrained(&path, EmbeddingFormat::TextVec, &vocab)?;
    println!("coverage {}/{} = {:.3}", rows.found(), rows.vocab_size(), rows.coverage());
    let table = rows.materialize(&mut ChaCha8Rng::seed_from_u64(0));
    println!("table {}x{}", table.vocab_size(), table.dim());
    Ok(())
}
