//! Class probabilities from freshly initialised CNN and BiLSTM classifiers.

use pcl_ensemble::models::{count_parameters, BilstmConfig, BilstmModel, Classifier, CnnConfig, CnnModel};
use pcl_ensemble::text_prep::{EmbeddingTable, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcl_ensemble::Result<()> {
    let texts = ["these poor souls need us", "the council met on monday"];
    let vocab = Vocabulary::build(texts, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let cnn = CnnModel::new(
        CnnConfig {
            embedding_dim: 16,
            ..Default::default()
        },
        vocab.clone(),
        EmbeddingTable::random(vocab.len(), 16, &mut rng),
        &mut rng,
    )?;
    let lstm = BilstmModel::new(
        BilstmConfig {
            hidden_size: 8,
            embedding_dim: 16,
            ..Default::default()
        },
        vocab.clone(),
        EmbeddingTable::random(vocab.len(), 16, &mut rng),
        &mut rng,
    )?;

    for (name, model) in [("cnn", &cnn as &dyn Classifier), ("bilstm", &lstm)] {
        println!("{name}: {} parameters", count_parameters(model));
        for (text, p) in texts.iter().zip(model.predict_texts(&texts)?) {
            println!("  P(pcl) = {:.4}  {text}", p.positive());
        }
    }
    Ok(())
}
