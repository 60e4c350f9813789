use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcl_ensemble::corpus::write_task_tsv;
use pcl_ensemble::models::{EncoderBundle, EncoderConfig};
use pcl_ensemble::synthetic::separable_records;

const ALIASES: [&str; 4] = ["google_news", "glove_word", "glove_twitter", "fasttext_crawl"];

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let records = separable_records(80, 1);
        write_task_tsv(&root.join("corpus.tsv"), &records).unwrap();
        for (k, alias) in ALIASES.iter().enumerate() {
            let mut text = String::new();
            for (i, word) in ["poor", "souls", "the", "council", "family", "zzz-unused"].iter().enumerate().skip(k) {
                let v: Vec<String> = (0..8).map(|j| format!("{:.3}", ((i * 8 + j) as f64).sin())).collect();
                let _ = writeln!(text, "{word} {}", v.join(" "));
            }
            std::fs::write(root.join(format!("{alias}.txt")), text).unwrap();
        }
        let bundle = EncoderBundle::miniature(
            "mini",
            records.iter().map(|r| r.text.as_str()),
            EncoderConfig::miniature(200),
            11,
        )
        .unwrap();
        bundle.save(&root.join("mini")).unwrap();
        Self { _dir: dir, root }
    }

    fn write_config(&self, name: &str, extra_data: &str, splits: &str, ensembles: &str) -> PathBuf {
        let mut text = format!(
            r#"output_root = "out"
seed = 3
threshold_grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

[data]
corpus = "corpus.tsv"
{extra_data}

[splits]
{splits}

[grid.cnn]
embeddings = ["glove_word"]
seeds = [0, 1]
max_epochs = 6
batch_size = 8
learning_rates = [1e-2]
model = {{ embedding_dim = 8, max_len = 32 }}

[grid.bilstm]
embeddings = ["glove_word"]
seeds = [0, 1]
max_epochs = 4
batch_size = 8
learning_rates = [1e-2]
model = {{ embedding_dim = 8, hidden_size = 4, max_len = 32 }}

[grid.transformer]
encoder_id = "mini"
max_tokens = 48
step_sizes = [2]
learning_rates = [3e-3]
seeds = [0]
max_epochs = 3
batch_size = 8

[sweep]
n_max = 5
{ensembles}
"#
        );
        for alias in ALIASES {
            let _ = write!(text, "\n[embeddings.{alias}]\npath = \"{alias}.txt\"\n");
        }
        let path = self.root.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn labelled(&self) -> PathBuf {
        self.write_config(
            "pcl.toml",
            "",
            "mode = \"stratified\"\ndev_fraction = 0.25\ntest_fraction = 0.25",
            r#"
[[ensembles]]
name = "ensemble1"
members = [{ top = 3 }]

[[ensembles]]
name = "ensemble2"
members = [{ family = "transformer", top = 1 }, { family = "cnn", top = 1 }, { family = "bilstm", top = 1 }]
"#,
        )
    }

    fn out(&self) -> PathBuf {
        self.root.join("out")
    }
}

fn pcl(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcl"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = pcl(config, args);
    assert!(
        out.status.success(),
        "pcl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_end_to_end() {
    let fx = Fixture::new();
    let config = fx.labelled();

    let stdout = ok(&config, &["prepare"]);
    assert!(stdout.contains("train\t40") && stdout.contains("dev\t20") && stdout.contains("test\t20"), "{stdout}");
    let prepared = fx.out().join("prepared");
    let first: Vec<String> = ["train.tsv", "dev.tsv", "test.tsv", "vocab.txt", "coverage.csv"]
        .iter()
        .map(|f| read(prepared.join(f)))
        .collect();
    let coverage = &first[4];
    assert_eq!(coverage.lines().count(), 5);
    for alias in ALIASES {
        assert!(coverage.contains(alias));
    }
    ok(&config, &["prepare"]);
    let second: Vec<String> = ["train.tsv", "dev.tsv", "test.tsv", "vocab.txt", "coverage.csv"]
        .iter()
        .map(|f| read(prepared.join(f)))
        .collect();
    assert_eq!(first, second);

    let stdout = ok(&config, &["grid", "--jobs", "2"]);
    assert!(stdout.contains("trained 5, skipped 0"), "{stdout}");
    let registry = read(fx.out().join("registry.jsonl"));
    assert_eq!(registry.lines().count(), 5);
    for run in ["cnn-glove_word-lr1e-2-s0", "bilstm-glove_word-h4-lr1e-2-s1", "transformer-step2-lr3e-3-s0"] {
        assert!(registry.contains(run), "{run} missing from registry");
        for f in ["spec.json", "metrics.csv", "model.ckpt", "pred_dev.tsv", "pred_test.tsv"] {
            assert!(fx.out().join("runs").join(run).join(f).exists(), "{run}/{f}");
        }
    }

    let stdout = ok(&config, &["grid", "--resume"]);
    assert!(stdout.contains("trained 0, skipped 5"), "{stdout}");
    assert_eq!(read(fx.out().join("registry.jsonl")).lines().count(), 5);

    let stdout = ok(&config, &["train", "--run", "cnn-glove_word-lr1e-2-s0"]);
    assert!(stdout.starts_with("cnn-glove_word-lr1e-2-s0"));

    let stdout = ok(&config, &["predict", "--split", "test"]);
    assert_eq!(stdout.lines().count(), 5);

    let stdout = ok(&config, &["ensemble"]);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    for name in ["ensemble1", "ensemble2"] {
        let dir = fx.out().join("ensembles").join(name);
        for f in ["spec.json", "pred_dev.tsv", "metrics_dev.json", "pred_test.tsv", "metrics_test.json"] {
            assert!(dir.join(f).exists(), "{name}/{f}");
        }
        let pred = read(dir.join("pred_dev.tsv"));
        assert!(pred.starts_with("par_id\tp_positive\n"));
        assert_eq!(pred.lines().count(), 21);
    }
    let spec: serde_json::Value = serde_json::from_str(&read(fx.out().join("ensembles/ensemble2/spec.json"))).unwrap();
    assert_eq!(spec["members"].as_array().unwrap().len(), 3);

    let stdout = ok(&config, &["sweep"]);
    assert_eq!(stdout.lines().count(), 6);
    assert_eq!(read(fx.out().join("sweep/sweep.csv")).lines().count(), 6);
    assert!(read(fx.out().join("sweep/sweep.svg")).starts_with("<svg"));

    let stdout = ok(&config, &["analyze", "--source", "ensemble1", "--split", "test"]);
    assert!(stdout.starts_with("keyword,fp,fn,total_pcl,total\n"));
    let total = stdout.lines().last().unwrap();
    assert!(total.starts_with("TOTAL,") && total.ends_with(",20"), "{total}");
    let adir = fx.out().join("analysis/ensemble1-test");
    assert!(read(adir.join("fp.tsv")).starts_with("par_id\tkeyword\tp_positive\ttext"));
    assert!(adir.join("fn.tsv").exists());
    ok(&config, &["analyze", "--source", "cnn-glove_word-lr1e-2-s1"]);

    ok(&config, &["report"]);
    let report = fx.out().join("report");
    assert_eq!(read(report.join("runs.csv")).lines().count(), 6);
    assert!(read(report.join("individual.csv")).contains("cnn glove_word"));
    assert!(read(report.join("ensembles.csv")).contains("ensemble2"));
    assert!(report.join("report.md").exists());

    let too_big = fx.write_config(
        "big.toml",
        "",
        "mode = \"stratified\"\ndev_fraction = 0.25\ntest_fraction = 0.25",
        "[[ensembles]]\nname = \"big\"\nmembers = [{ top = 9 }]\n",
    );
    let out = pcl(&too_big, &["ensemble"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains('5'));
}

#[test]
fn unlabeled_test_split_cannot_be_analysed() {
    let fx = Fixture::new();
    let blind: Vec<_> = separable_records(12, 9)
        .into_iter()
        .map(|mut r| {
            r.par_id = format!("t{}", r.par_id);
            r
        })
        .collect();
    let mut text = String::new();
    for r in &blind {
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}", r.par_id, r.art_id, r.keyword, r.country_code, r.text);
    }
    std::fs::write(fx.root.join("blind.tsv"), text).unwrap();
    let config = fx.write_config(
        "blind.toml",
        "test_corpus = \"blind.tsv\"\ntest_schema = { label = \"none\", columns = 5, header = \"absent\" }",
        "mode = \"stratified\"\ndev_fraction = 0.3",
        "[[ensembles]]\nname = \"solo\"\nmembers = [{ family = \"cnn\", top = 1 }]\n",
    );
    let stdout = ok(&config, &["prepare"]);
    assert!(stdout.contains("test\t12"), "{stdout}");
    ok(&config, &["grid", "--family", "cnn"]);
    let stdout = ok(&config, &["ensemble"]);
    assert!(!stdout.contains("test P"), "{stdout}");
    assert!(fx.out().join("ensembles/solo/pred_test.tsv").exists());
    assert!(!fx.out().join("ensembles/solo/metrics_test.json").exists());

    let out = pcl(&config, &["analyze", "--source", "solo", "--split", "test"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn input_errors_exit_with_code_two() {
    let fx = Fixture::new();
    let config = fx.labelled();
    let text = read(config.clone()).replace("corpus.tsv", "missing.tsv");
    let bad = fx.root.join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    let out = pcl(&bad, &["prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.corpus"));

    let typo = fx.root.join("typo.toml");
    std::fs::write(&typo, read(config).replace("[data]", "[data]\ncolour = 1")).unwrap();
    let out = pcl(&typo, &["prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.colour"));

    let out = pcl(&fx.root.join("nope.toml"), &["prepare"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_before_grid_report_selection_errors() {
    let fx = Fixture::new();
    let config = fx.labelled();
    let out = pcl(&config, &["ensemble"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
