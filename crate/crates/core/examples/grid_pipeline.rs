//! Whole experiment on a small corpus: prepare, train a grid, ensemble, sweep,
//! analyse and report. Mirrors `pcl --config ...` subcommands.

use pcl_ensemble::corpus::{write_task_tsv, SplitName};
use pcl_ensemble::pipeline::{Pipeline, PipelineConfig};
use pcl_ensemble::synthetic::separable_records;
use pcl_ensemble::training::{expand_grid, GridConfig};

const CONFIG: &str = r#"
output_root = "out"
seed = 1

[data]
corpus = "corpus.tsv"

[splits]
mode = "stratified"
dev_fraction = 0.25
test_fraction = 0.25

[embeddings.glove_word]
path = "glove.txt"

[grid.cnn]
embeddings = ["glove_word"]
seeds = [0, 1, 2]
learning_rates = [1e-2]
max_epochs = 5
batch_size = 8
model = { embedding_dim = 4, max_len = 32 }

[grid.bilstm]
embeddings = ["glove_word"]
seeds = [0, 1]
learning_rates = [1e-2]
max_epochs = 4
batch_size = 8
model = { embedding_dim = 4, hidden_size = 4, max_len = 32 }

[[ensembles]]
name = "top3"
members = [{ top = 3 }]

[[ensembles]]
name = "mixed"
members = [{ family = "cnn", top = 2 }, { family = "bilstm", top = 1 }]

[sweep]
n_max = 5
"#;

fn main() -> pcl_ensemble::Result<()> {
    println!("default grid expands to {} runs", expand_grid(&GridConfig::standard())?.len());

    let dir = tempfile::tempdir().expect("tempdir");
    write_task_tsv(&dir.path().join("corpus.tsv"), &separable_records(96, 2))?;
    std::fs::write(
        dir.path().join("glove.txt"),
        "poor 0.9 0.1 0.0 0.2\nsouls 0.1 0.8 0.3 0.0\nthe 0.0 0.0 0.1 0.1\n",
    )
    .expect("write vectors");
    let mut config = PipelineConfig::from_toml(CONFIG)?;
    config.resolve_paths(dir.path());
    config.validate()?;
    let pipeline = Pipeline::new(config);

    let prepared = pipeline.prepare()?;
    println!("splits {:?}, vocabulary {}", prepared.split_sizes, prepared.vocab_size);
    let grid = pipeline.grid(None, true, 2)?;
    println!("trained {:?}", grid.trained);

    for r in pipeline.ensemble(None)? {
        println!(
            "{}: {:?} threshold {:?} dev F1 {:.3} test F1 {:.3}",
            r.spec.ensemble_id,
            r.spec.members,
            r.spec.threshold,
            r.dev.f1,
            r.test.map_or(f64::NAN, |m| m.f1)
        );
    }
    for p in pipeline.sweep()? {
        println!("sweep n={} F1 {:.3}", p.n, p.f1);
    }
    print!("{}", pipeline.analyze("top3", SplitName::Test)?.to_csv());
    println!("report at {}", pipeline.report()?.display());
    Ok(())
}
