//! Compare backprop gradients of a small BiLSTM with central finite differences.

use pcl_ensemble::autograd::Graph;
use pcl_ensemble::models::{BilstmConfig, BilstmModel, Classifier};
use pcl_ensemble::text_prep::{EmbeddingTable, Vocabulary, PAD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(model: &dyn Classifier, inputs: &[&[usize]], labels: &[usize]) -> f64 {
    let mut g = Graph::new(model.params());
    let out = model.batch_loss(&mut g, inputs, labels, None);
    g.value(out)[[0, 0]]
}

fn main() -> pcl_ensemble::Result<()> {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((2..10).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = BilstmConfig {
        hidden_size: 3,
        dropout: 0.0,
        embedding_dim: 4,
        max_len: 8,
    };
    let table = EmbeddingTable::random(vocab.len(), 4, &mut rng);
    let mut model = BilstmModel::new(config, vocab, table, &mut rng)?;

    let inputs: [&[usize]; 2] = [&[2, 5, 9, 3, 4], &[7, 1, 6]];
    let labels = [0, 1];
    let mut grads = model.params().zero_grads();
    let mut g = Graph::new(model.params());
    let out = model.batch_loss(&mut g, &inputs, &labels, None);
    g.backward(out, &mut grads);
    println!("loss {:.6}", g.value(out)[[0, 0]]);

    let step = 1e-5;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        let (rows, cols) = model.params().get(id).dim();
        let mut worst = 0.0f64;
        for r in 0..rows {
            if name == "embedding" && r == PAD {
                continue;
            }
            for c in 0..cols {
                let orig = model.params().get(id)[[r, c]];
                model.params_mut().get_mut(id)[[r, c]] = orig + step;
                let plus = loss(&model, &inputs, &labels);
                model.params_mut().get_mut(id)[[r, c]] = orig - step;
                let minus = loss(&model, &inputs, &labels);
                model.params_mut().get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = grads.get(id)[[r, c]];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-8 {
                    worst = worst.max((analytic - numeric).abs() / scale);
                }
            }
        }
        println!("{name:<22} {rows:>2}x{cols:<2} max relative error {worst:.2e}");
    }
    Ok(())
}
