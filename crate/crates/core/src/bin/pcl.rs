use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcl_ensemble::corpus::SplitName;
use pcl_ensemble::models::Family;
use pcl_ensemble::pipeline::{Pipeline, PipelineConfig};
use pcl_ensemble::Result;

#[derive(Parser)]
#[command(name = "pcl", version, about = "Condescending-language detection experiment pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the output root from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialise splits, vocabulary and embedding coverage.
    Prepare,
    /// Train a single grid run.
    Train {
        #[arg(long)]
        run: String,
    },
    /// Train every grid run.
    Grid {
        #[arg(long)]
        family: Option<Family>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip runs already present in the registry.
        #[arg(long)]
        resume: bool,
    },
    /// Write predictions of registered runs on a split.
    Predict {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// Build, tune and evaluate configured ensembles.
    Ensemble {
        #[arg(long)]
        name: Option<String>,
    },
    /// Ensemble-size sweep on dev.
    Sweep,
    /// Keyword error breakdown and FP/FN listings for a run or ensemble.
    Analyze {
        #[arg(long)]
        source: String,
        #[arg(long, default_value = "dev")]
        split: SplitName,
    },
    /// Summary tables over the registry and ensembles.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| pcl_ensemble::Error::config("--config", "a config file is required"))?;
    let text = std::fs::read_to_string(&path).map_err(|e| pcl_ensemble::Error::io(&path, e))?;
    let mut config = PipelineConfig::from_toml(&text)?;
    if let Some(out) = cli.out {
        config.output_root = std::path::absolute(&out).map_err(|e| pcl_ensemble::Error::io(&out, e))?;
    }
    config.resolve_paths(path.parent().unwrap_or(std::path::Path::new("")));
    config.validate()?;
    let pipeline = Pipeline::new(config);

    match cli.command {
        Command::Prepare => {
            let s = pipeline.prepare()?;
            for (name, n) in &s.split_sizes {
                println!("{name}\t{n}");
            }
            println!("vocab\t{}", s.vocab_size);
            for c in &s.coverage {
                println!("coverage\t{}\t{:.4}", c.alias, c.coverage);
            }
        }
        Command::Train { run } => {
            let r = pipeline.train_one(&run)?;
            println!("{}\tbest_epoch {}\tdev_f1 {:.4}", r.run_id, r.best_epoch, r.best_dev_f1);
        }
        Command::Grid { family, jobs, resume } => {
            let s = pipeline.grid(family, resume, jobs)?;
            println!("trained {}, skipped {}", s.trained.len(), s.skipped.len());
        }
        Command::Predict { run, split } => {
            for p in pipeline.predict(run.as_deref(), split)? {
                println!("{}", p.display());
            }
        }
        Command::Ensemble { name } => {
            for r in pipeline.ensemble(name.as_deref())? {
                let t = r.spec.threshold.unwrap_or(f64::NAN);
                print!(
                    "{}\tthreshold {t}\tdev P {:.4} R {:.4} F1 {:.4}",
                    r.spec.ensemble_id, r.dev.precision, r.dev.recall, r.dev.f1
                );
                if let Some(m) = r.test {
                    print!("\ttest P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
                }
                println!();
            }
        }
        Command::Sweep => {
            println!("n,precision,recall,f1");
            for p in pipeline.sweep()? {
                println!("{},{:.4},{:.4},{:.4}", p.n, p.precision, p.recall, p.f1);
            }
        }
        Command::Analyze { source, split } => {
            print!("{}", pipeline.analyze(&source, split)?.to_csv());
        }
        Command::Report => {
            println!("{}", pipeline.report()?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
