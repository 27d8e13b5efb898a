use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nutime(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nutime"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NUTIME_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn small_synth(dir: &Path) {
    fs::write(
        dir.join("spec.toml"),
        "length = 64\n[samples_per_class]\ntrain = 8\nval = 4\ntest = 4\n",
    )
    .unwrap();
    ok(&nutime(&["synth", "--spec", "spec.toml", "--out", "d", "--seed", "2"], dir));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nutime(&["pretrain", "--data", "d"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(nutime(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(nutime(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[model]\nwidth = 3\n").unwrap();
    let out = nutime(&["--config", "c.toml", "synth", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = nutime(&["pretrain", "--data", "missing", "--out", "x.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("bad.tsv"), "0\t1\t2\n1\t1\n").unwrap();
    let out = nutime(&["finetune", "--train", "bad.tsv", "--test", "bad.tsv", "--out", "c"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.tsv:2"));

    fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    fs::write(dir.path().join("x.tsv"), "0\t1\t2\n").unwrap();
    let out = nutime(&["embed", "--ckpt", "junk.ckpt", "--input", "x.tsv", "--out", "e.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let out = nutime(
        &["pretrain", "--data", "d", "--out", "p.ckpt", "--epochs", "2", "--lr", "1e300"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn threads_env_is_the_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nutime"))
        .args(["synth", "--out", "d"])
        .current_dir(dir.path())
        .env("NUTIME_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_nutime"))
        .args(["--threads", "1", "synth", "--out", "d"])
        .current_dir(dir.path())
        .env("NUTIME_THREADS", "0")
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn pipeline_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p);
    ok(&nutime(&["--threads", "1", "pretrain", "--data", "d", "--out", "enc.ckpt", "--epochs", "2"], p));
    let curve = fs::read_to_string(p.join("enc.ckpt.loss.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,mean_loss,lr,tau"));
    assert_eq!(curve.lines().count(), 3);

    ok(&nutime(
        &["finetune", "--ckpt", "enc.ckpt", "--data", "d", "--out", "clf.ckpt", "--epochs", "2", "--metrics", "m.csv"],
        p,
    ));
    ok(&nutime(
        &["eval", "--ckpt", "clf.ckpt", "--test", "d/test.tsv", "--metrics", "m.csv"],
        p,
    ));
    ok(&nutime(
        &["eval", "--ckpt", "clf.ckpt", "--ckpt", "clf.ckpt", "--test", "d/test.tsv", "--metrics", "m2.csv"],
        p,
    ));
    let single = fs::read_to_string(p.join("m.csv")).unwrap();
    let double = fs::read_to_string(p.join("m2.csv")).unwrap();
    assert_eq!(single.lines().nth(2).unwrap().split(',').nth(5), double.lines().nth(1).unwrap().split(',').nth(5));
    ok(&nutime(&["cluster", "--ckpt", "enc.ckpt", "--data", "d", "--metrics", "m.csv"], p));
    ok(&nutime(
        &["fewshot", "--ckpt", "enc.ckpt", "--data", "d", "--shots", "2", "--episodes", "2", "--metrics", "m.csv"],
        p,
    ));
    let metrics = fs::read_to_string(p.join("m.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("command,config_hash,"));
    assert!(lines[1].starts_with("finetune,") && lines[4].starts_with("fewshot,"));

    ok(&nutime(&["embed", "--ckpt", "enc.ckpt", "--input", "d/test.tsv", "--out", "e.csv"], p));
    let emb = fs::read_to_string(p.join("e.csv")).unwrap();
    let rows: Vec<&str> = emb.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').count() == 64));

    ok(&nutime(&["attn", "--ckpt", "enc.ckpt", "--input", "d/test.tsv", "--out", "a.json"], p));
    let attn: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("a.json")).unwrap()).unwrap();
    let layers = attn[0]["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    let head0 = layers[0][0].as_array().unwrap();
    assert_eq!(head0.len(), 4);
    let total: f64 = head0.iter().map(|v| v.as_f64().unwrap()).sum();
    assert!(total <= 1.0 + 1e-6);

    // Class 0 alone is normal, so class-1 test series are the anomalies.
    fs::write(
        p.join("normal.tsv"),
        fs::read_to_string(p.join("d/train.tsv")).unwrap().lines().filter(|l| l.starts_with("0\t")).map(|l| format!("{l}\n")).collect::<String>(),
    )
    .unwrap();
    ok(&nutime(&["anomaly", "--ckpt", "enc.ckpt", "--normal", "normal.tsv", "--test", "d/test.tsv"], p));
}
