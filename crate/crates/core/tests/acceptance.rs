//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use larson_core::config::ModelConfig;
use larson_core::corpus::{Document, RelationVocab};
use larson_core::exec::Execution;
use larson_core::model::{prepare_document, Model, PreparedDocument};
use larson_core::objectives::Metrics;
use larson_core::selftest::{self, CheckOutcome};
use larson_core::synthetic::{ablation_corpus, overfit_corpus};
use larson_core::train::{collect_train_facts, evaluate, train, TrainOptions, TrainReport};

const SEED: u64 = 0;

fn budget(mut outcomes: Vec<CheckOutcome>, name: &'static str, limit: Duration) -> CheckOutcome {
    let elapsed: Duration = outcomes.iter().map(|o| o.elapsed).sum();
    let passed = outcomes.iter().all(|o| o.passed) && elapsed < limit;
    let detail = outcomes
        .drain(..)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect::<Vec<_>>()
        .join("; ");
    CheckOutcome {
        name,
        passed,
        detail: format!("{detail}; runtime limit {}s", limit.as_secs()),
        elapsed,
    }
}

fn prepare(model: &Model, docs: &[Document]) -> Vec<PreparedDocument> {
    docs.iter()
        .map(|d| prepare_document(model, d).expect("generated documents are valid"))
        .collect()
}

fn base_config(relations: &RelationVocab) -> ModelConfig {
    let mut c = ModelConfig {
        relations: relations.labels().to_vec(),
        seed: SEED,
        ..ModelConfig::default()
    };
    c.encoder.dim = 64;
    c.optim.lr_encoder = 3e-4;
    c.optim.lr_rest = 1e-3;
    c
}

fn run(
    config: ModelConfig,
    train_docs: &[Document],
    dev_docs: &[Document],
) -> (Model, TrainReport) {
    let (model, mut store) = Model::new(config).expect("valid config");
    let relations = model.relations.clone();
    let train_prep = prepare(&model, train_docs);
    let dev_prep = prepare(&model, dev_docs);
    let facts = collect_train_facts(train_docs, &relations);
    let report = train(
        &model,
        &mut store,
        &train_prep,
        &dev_prep,
        &facts,
        TrainOptions {
            exec: Execution::default(),
            on_epoch: None,
        },
    )
    .expect("training succeeds");
    (model, report)
}

/// Means over consecutive windows of one epoch each.
fn epoch_means(losses: &[f64], per_epoch: usize) -> Vec<f64> {
    losses
        .chunks(per_epoch)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn overfit() -> Vec<CheckOutcome> {
    let start = Instant::now();
    let (relations, docs) = overfit_corpus(20, SEED);
    let mut config = base_config(&relations);
    config.optim.epochs = 100;
    config.optim.max_steps = Some(500);
    let per_epoch = docs.len().div_ceil(config.optim.batch_size);
    let (model, report) = run(config, &docs, &docs);
    let elapsed = start.elapsed();

    let reached = report
        .epochs
        .iter()
        .find(|e| e.dev.is_some_and(|m| m.f1() == 1.0 && m.evidence.f1 >= 0.9));
    let facts = collect_train_facts(&docs, &relations);
    let best: Metrics = evaluate(
        &model,
        &report.best_params,
        &prepare(&model, &docs),
        &facts,
        Execution::default(),
        false,
    )
    .expect("evaluation")
    .metrics;
    let overfit = CheckOutcome {
        name: "overfit",
        passed: reached.is_some_and(|e| e.step <= 500)
            && best.f1() == 1.0
            && elapsed < Duration::from_secs(300),
        detail: match reached {
            Some(e) => format!(
                "F1 = 1.0 and EviF1 >= 0.9 first at step {} (limit 500); best checkpoint F1 {:.4} EviF1 {:.4}; runtime limit 300s",
                e.step,
                best.f1(),
                best.evidence.f1
            ),
            None => format!(
                "never reached F1 = 1.0 with EviF1 >= 0.9; best checkpoint F1 {:.4} EviF1 {:.4}",
                best.f1(),
                best.evidence.f1
            ),
        },
        elapsed,
    };

    let means = epoch_means(&report.step_losses[..20], per_epoch);
    let monotone = means.windows(2).all(|w| w[1] < w[0]);
    let smoothing = CheckOutcome {
        name: "overfit loss decreases over the first 20 steps",
        passed: monotone,
        detail: format!(
            "epoch-window means {:?}",
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
        elapsed: Duration::ZERO,
    };
    vec![overfit, smoothing]
}

fn ablation() -> CheckOutcome {
    let start = Instant::now();
    let (relations, docs) = ablation_corpus(200, SEED);
    let (train_docs, dev_docs) = docs.split_at(160);
    let mut config = base_config(&relations);
    config.optim.epochs = 20;
    let (_, full) = run(config.clone(), train_docs, dev_docs);
    config.ablate.constituency = true;
    let (_, ablated) = run(config, train_docs, dev_docs);
    let f1 = |r: &TrainReport| r.best_dev.map_or(0.0, |m| m.f1());
    let (a, b) = (f1(&full), f1(&ablated));
    CheckOutcome {
        name: "ablation direction",
        passed: a - b >= 0.02,
        detail: format!(
            "dev F1 full {:.2} vs ablate.constituency {:.2}, margin {:.2} points (need >= 2)",
            100.0 * a,
            100.0 * b,
            100.0 * (a - b)
        ),
        elapsed: start.elapsed(),
    }
}

fn main() -> ExitCode {
    let mut lines = vec![
        budget(
            vec![
                selftest::atl_oracle(1000, SEED),
                selftest::gat_oracle(100, SEED + 1),
                selftest::attention_oracle(100, SEED + 2),
            ],
            "oracle equivalence",
            Duration::from_secs(30),
        ),
        budget(
            vec![selftest::batching_equivalence(50, SEED + 3)],
            "batching equivalence",
            Duration::from_secs(10),
        ),
        budget(
            vec![selftest::tree_lstm_checks(SEED + 4)],
            "tree-lstm correctness",
            Duration::from_secs(10),
        ),
        budget(
            vec![selftest::gradient_audit(SEED + 5)],
            "gradient audit",
            Duration::from_secs(120),
        ),
    ];
    lines.extend(overfit());
    lines.push(ablation());
    lines.push(selftest::determinism(SEED + 6));
    lines.push(selftest::metrics_fixtures());

    for l in &lines {
        println!("{l}");
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!(
        "{} of {} criteria passed",
        lines.len() - failed,
        lines.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
