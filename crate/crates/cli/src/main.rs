use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use larson_core::checkpoint;
use larson_core::config::ModelConfig;
use larson_core::corpus::{load_corpus, write_corpus, Document};
use larson_core::exec::Execution;
use larson_core::model::{prepare_document, Model, PreparedDocument};
use larson_core::objectives::TrainFacts;
use larson_core::selftest;
use larson_core::synthetic::{ablation_corpus, overfit_corpus};
use larson_core::train::{collect_train_facts, evaluate, train, EpochLog, TrainOptions};

const TRAIN_FACTS_FILE: &str = "train_facts.json";

#[derive(Parser)]
#[command(
    name = "larson",
    version,
    about = "Document-level relation extraction with syntax-aware encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint by dev F1.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Independent runs with seeds seed, seed+1, ...; each goes to `out/run<k>`.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Process the documents of a batch one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Evaluate a checkpoint and print metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train_facts: PathBuf,
        /// Write per-pair fusion weights as JSON lines.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Run the oracle, equivalence and gradient suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a generated corpus with parses and a matching config.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of documents put in `out/dev`.
        #[arg(long, default_value_t = 0.2)]
        dev_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Overfit,
    Ablation,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn prepare_all(model: &Model, docs: &[Document]) -> Result<Vec<PreparedDocument>> {
    docs.iter()
        .map(|d| prepare_document(model, d).with_context(|| format!("preparing {}", d.doc_id)))
        .collect()
}

fn run_train(
    config: &ModelConfig,
    train_dir: &Path,
    dev_dir: &Path,
    out: &Path,
    exec: Execution,
) -> Result<Option<f64>> {
    let (model, mut store) = Model::new(config.clone())?;
    let train_docs = load_corpus(train_dir, &model.relations)?;
    let dev_docs = load_corpus(dev_dir, &model.relations)?;
    let train_prep = prepare_all(&model, &train_docs)?;
    let dev_prep = prepare_all(&model, &dev_docs)?;
    let facts = collect_train_facts(&train_docs, &model.relations);
    eprintln!(
        "seed {}: {} train / {} dev documents, {} parameters",
        config.seed,
        train_prep.len(),
        dev_prep.len(),
        store.scalar_count()
    );
    let mut log = |e: &EpochLog| {
        let dev = e.dev.map_or_else(|| "-".into(), |m| m.to_json());
        eprintln!(
            "epoch {:>3} step {:>6} loss {:.5} dev {dev}",
            e.epoch, e.step, e.mean_loss
        );
    };
    let report = train(
        &model,
        &mut store,
        &train_prep,
        &dev_prep,
        &facts,
        TrainOptions {
            exec,
            on_epoch: Some(&mut log),
        },
    )?;
    let dev_f1 = report.best_dev.map(|m| m.f1());
    checkpoint::save(out, &model, &report.best_params, dev_f1)?;
    let facts_path = out.join(TRAIN_FACTS_FILE);
    fs::write(&facts_path, serde_json::to_string(&facts)?)
        .with_context(|| format!("writing {}", facts_path.display()))?;
    if let Some(m) = report.best_dev {
        eprintln!("best epoch {:?}\n{}", report.best_epoch, m.table());
    }
    Ok(dev_f1)
}

fn cmd_train(
    config: &Path,
    train_dir: &Path,
    dev_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    repeat: usize,
    exec: Execution,
) -> Result<()> {
    let mut config = ModelConfig::load(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    if repeat == 1 {
        let f1 = run_train(&config, train_dir, dev_dir, out, exec)?;
        println!("{}", serde_json::json!({ "dev_f1": f1 }));
        return Ok(());
    }
    let base = config.seed;
    let mut scores = Vec::new();
    for k in 0..repeat {
        config.seed = base + k as u64;
        let f1 = run_train(
            &config,
            train_dir,
            dev_dir,
            &out.join(format!("run{k}")),
            exec,
        )?;
        scores.push(f1.unwrap_or(0.0));
    }
    let mean = scores.iter().sum::<f64>() / repeat as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeat as f64 - 1.0);
    let summary = serde_json::json!({ "dev_f1": scores, "mean": mean, "std": var.sqrt() });
    fs::write(out.join("summary.json"), summary.to_string())?;
    println!("{summary}");
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    facts: &Path,
    dump: Option<&Path>,
    exec: Execution,
) -> Result<()> {
    let (model, store, _) = checkpoint::load(ckpt)?;
    let docs = load_corpus(data, &model.relations)
        .context("corpus does not match the checkpoint's relation vocabulary or is malformed")?;
    let prepared = prepare_all(&model, &docs)?;
    let text = fs::read_to_string(facts).with_context(|| format!("reading {}", facts.display()))?;
    let train_facts: TrainFacts =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", facts.display()))?;
    let result = evaluate(
        &model,
        &store,
        &prepared,
        &train_facts,
        exec,
        dump.is_some(),
    )?;
    if let Some(path) = dump {
        let mut f =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        for r in &result.attention {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
    }
    println!("{}", result.metrics.to_json());
    eprint!("{}", result.metrics.table());
    Ok(())
}

fn cmd_selftest(seed: u64) -> Result<bool> {
    let outcomes = selftest::run_all(seed);
    for o in &outcomes {
        println!("{o}");
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn cmd_synth(kind: SynthKind, docs: usize, seed: u64, dev_fraction: f64, out: &Path) -> Result<()> {
    if !(0.0..1.0).contains(&dev_fraction) {
        bail!("--dev-fraction must lie in [0, 1)");
    }
    let (relations, all) = match kind {
        SynthKind::Overfit => overfit_corpus(docs, seed),
        SynthKind::Ablation => ablation_corpus(docs, seed),
    };
    let n_dev = (docs as f64 * dev_fraction).round() as usize;
    let (train_docs, dev_docs) = all.split_at(docs - n_dev);
    write_corpus(&out.join("train"), train_docs, &relations)?;
    write_corpus(&out.join("dev"), dev_docs, &relations)?;
    let config = ModelConfig {
        relations: relations.labels().to_vec(),
        seed,
        ..ModelConfig::default()
    };
    fs::write(out.join("config.txt"), config.to_text())?;
    eprintln!(
        "wrote {} train and {} dev documents to {}",
        train_docs.len(),
        dev_docs.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            train,
            dev,
            out,
            seed,
            repeat,
            sequential,
        } => cmd_train(
            &config,
            &train,
            &dev,
            &out,
            seed,
            repeat,
            execution(sequential),
        )
        .map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            train_facts,
            dump_attention,
            sequential,
        } => cmd_eval(
            &checkpoint,
            &data,
            &train_facts,
            dump_attention.as_deref(),
            execution(sequential),
        )
        .map(|_| true),
        Command::Selftest { seed } => cmd_selftest(seed),
        Command::Synth {
            kind,
            docs,
            seed,
            dev_fraction,
            out,
        } => cmd_synth(kind, docs, seed, dev_fraction, &out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
