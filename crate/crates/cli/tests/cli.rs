use std::path::Path;
use std::process::{Command, Output};

fn larson(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larson"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = larson(&[
        "synth",
        "--kind",
        "overfit",
        "--docs",
        "5",
        "--out",
        s(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let config = data.join("config.txt");
    let text: String = std::fs::read_to_string(&config)
        .unwrap()
        .lines()
        .map(|l| match l.split('=').next().map(str::trim) {
            Some("encoder.dim") => "encoder.dim = 16\n".to_string(),
            Some("optim.epochs") => "optim.epochs = 1\n".to_string(),
            _ => format!("{l}\n"),
        })
        .collect();
    std::fs::write(&config, text).unwrap();

    let ckpt = tmp.path().join("ckpt");
    let out = larson(&[
        "train",
        "--config",
        s(&config),
        "--train",
        s(&data.join("train")),
        "--dev",
        s(&data.join("dev")),
        "--out",
        s(&ckpt),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let dump = tmp.path().join("attention.jsonl");
    let out = larson(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data.join("dev")),
        "--train-facts",
        s(&ckpt.join("train_facts.json")),
        "--dump-attention",
        s(&dump),
        "--sequential",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["f1", "ign_f1", "intra_f1", "inter_f1", "evi_f1"] {
        assert!(metrics[key].is_f64(), "missing {key}");
    }
    let lines = std::fs::read_to_string(&dump).unwrap();
    for line in lines.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let b = ["beta_subject", "beta_object", "beta_context"]
            .map(|k| record[k].as_array().unwrap().len());
        assert!(b[0] == b[1] && b[1] == b[2]);
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = larson(&[
        "eval",
        "--checkpoint",
        s(tmp.path()),
        "--data",
        s(tmp.path()),
        "--train-facts",
        s(&tmp.path().join("none.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
