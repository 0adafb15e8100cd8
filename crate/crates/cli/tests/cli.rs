use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
synth_n_train = 120
synth_n_dev = 40
synth_n_annotation = 40
embedding_dim = 8
hidden_dim = 8
freeze_embeddings = false
lr_gen = 0.002
lr_pred = 0.002
batch_size = 32
epochs = 2
coherence = mean
lambda1 = 5
";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rationalift"));
    cmd.env_remove("RUST_LOG");
    cmd
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).env("RATIONALIFT_OUT", dir.join("runs")).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_writes_the_fixed_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("fr");
    let o = run(&["train", "--config", p(&cfg), "--mode", "fr", "--out", p(&out)], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "metrics.jsonl", "final.json", "checkpoint.json", "config.cfg", "reports"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let lines: Vec<Value> = std::fs::read_to_string(out.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|r| r["annotation"]["F1"].is_number()));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["config"]["model"]["share_depth"], 1);
    for (_, path) in manifest["artifacts"].as_object().unwrap() {
        for p in path.as_array().cloned().unwrap_or_else(|| vec![path.clone()]) {
            if let Some(p) = p.as_str() {
                assert!(Path::new(p).exists(), "{p}");
            }
        }
    }
}

#[test]
fn rates_are_echoed_and_runs_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let args = |out: &Path| {
        vec!["train", "--config", p(&cfg), "--mode", "rnp", "--lr-gen", "1e-3", "--lr-pred", "2e-4", "--out"]
            .into_iter()
            .map(String::from)
            .chain([p(out).to_string()])
            .collect::<Vec<_>>()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin().args(args(out)).output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["config"]["train"]["lr_gen"], 1e-3);
    assert_eq!(m["config"]["train"]["lr_pred"], 2e-4);
    assert_eq!(m["config"]["model"]["share_depth"], 0);
    assert!(m["config_text"].as_str().unwrap().contains("lr_pred = 0.0002"));
    for f in ["metrics.jsonl", "final.json", "checkpoint.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_config_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = dir.path().join("first");
    assert_eq!(code(&run(&["train", "--config", p(&cfg), "--seed", "4", "--out", p(&first)], dir.path())), 0);
    let replay_cfg = dir.path().join("replay.cfg");
    std::fs::write(&replay_cfg, json(&first.join("manifest.json"))["config_text"].as_str().unwrap()).unwrap();
    let second = dir.path().join("second");
    assert_eq!(code(&run(&["train", "--config", p(&replay_cfg), "--out", p(&second)], dir.path())), 0);
    assert_eq!(std::fs::read(first.join("metrics.jsonl")).unwrap(), std::fs::read(second.join("metrics.jsonl")).unwrap());
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--config", "no/such.cfg"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such.cfg"));
    assert_eq!(code(&run(&["skew", "--kind", "sideways", "--k", "1"], dir.path())), 2);
    assert_eq!(code(&run(&["train", "--set", "share_depth=5"], dir.path())), 2);
    assert_eq!(code(&run(&["train", "--set", "nonsense"], dir.path())), 2);
    assert_eq!(code(&run(&["grid", "--gen-rates", "", "--pred-rates", "1e-3"], dir.path())), 2);
    assert_eq!(code(&run(&["probe", "--probe", "lemma3", "--checkpoint", "missing.json"], dir.path())), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("boom");
    let o = run(&["train", "--config", p(&cfg), "--set", "lambda1=1e308", "--set", "alpha=1", "--out", p(&out)], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("manifest.json"))["status"], "failed");
}

#[test]
fn skew_records_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let gen = dir.path().join("gen");
    let o = run(
        &["skew", "--kind", "generator", "--k", "0.6", "--config", p(&cfg), "--set", "skew_batch_size=16", "--set", "skew_lr=0.01", "--out", p(&gen)],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&gen.join("manifest.json"))["pre_acc"].as_f64().unwrap() > 0.6);

    let pred = dir.path().join("pred");
    let o = run(&["skew", "--kind", "predictor", "--k", "3", "--config", p(&cfg), "--out", p(&pred)], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&pred.join("manifest.json"))["skew_outcome"]["epochs"], 3);
}

#[test]
fn grid_writes_children_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("grid");
    let args = ["grid", "--config", p(&cfg), "--mode", "rnp", "--epochs", "1", "--gen-rates", "0.002,0.001", "--pred-rates", "0.0004,0.01", "--out", p(&out)];
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cells: Vec<PathBuf> = std::fs::read_dir(out.join("cells")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|c| c.join("manifest.json").exists()));
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let stamp = |c: &Path| std::fs::metadata(c.join("metrics.jsonl")).unwrap().modified().unwrap();
    let before: Vec<_> = cells.iter().map(|c| stamp(c)).collect();
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0);
    let after: Vec<_> = cells.iter().map(|c| stamp(c)).collect();
    assert_eq!(before, after);
    assert_eq!(std::fs::read_to_string(out.join("grid.csv")).unwrap(), csv);
}

fn trained(dir: &Path, mode: &str) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(mode);
    let o = run(&["train", "--config", p(&cfg), "--mode", mode, "--out", p(&out)], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("checkpoint.json")
}

#[test]
fn probes_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let fr = trained(dir.path(), "fr");
    let rnp = trained(dir.path(), "rnp");
    let sentence = "pos0 f0 f1 neg0";
    for (ckpt, views) in [(&fr, 1), (&rnp, 2)] {
        let out = dir.path().join(format!("lemma3-{views}"));
        let o = run(&["probe", "--probe", "lemma3", "--checkpoint", p(ckpt), "--sentence", sentence, "--out", p(&out)], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let report = json(&out.join("reports/probe_lemma3.json"));
        assert_eq!(report["views"].as_array().unwrap().len(), views);
        assert!(std::fs::read_to_string(out.join("reports/probe_lemma3.html")).unwrap().contains("<svg"));
    }
    for probe in ["insertion", "uninformative"] {
        let out = dir.path().join(probe);
        let o = run(&["probe", "--probe", probe, "--checkpoint", p(&fr), "--out", p(&out)], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(format!("reports/probe_{probe}.json")).exists());
    }
    let o = run(&["probe", "--probe", "lemma3", "--checkpoint", p(&fr), "--sentence", "zzz"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["probe", "--probe", "telepathy", "--checkpoint", p(&fr)], dir.path())), 2);
}

#[test]
fn eval_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let fr = trained(dir.path(), "fr");
    let o = run(&["eval", "--checkpoint", p(&fr), "--split", "annotation"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["S", "Acc", "P", "R", "F1"] {
        assert!(m[k].is_number(), "{k}");
    }
    let out = dir.path().join("r0");
    let o = run(&["render", "--checkpoint", p(&fr), "--n", "0", "--format", "ansi", "--out", p(&out)], dir.path());
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(out.join("reports/rationales.txt")).unwrap(), "");
    let out = dir.path().join("r3");
    assert_eq!(code(&run(&["render", "--checkpoint", p(&fr), "--n", "3", "--out", p(&out)], dir.path())), 0);
    assert_eq!(std::fs::read_to_string(out.join("reports/rationales.html")).unwrap().matches("class=\"ex\"").count(), 3);
}

#[test]
fn review_corpus_without_gold() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = String::new();
    let mut dev = String::new();
    for i in 0..40 {
        let (rating, word) = if i % 2 == 0 { (0.2, "bad") } else { (0.8, "great") };
        let line = format!("{{\"id\": \"r{i}\", \"rating\": {rating}, \"text\": \"the beer looks {word} .\"}}\n");
        if i < 30 { train.push_str(&line) } else { dev.push_str(&line) }
    }
    std::fs::write(dir.path().join("train.jsonl"), train).unwrap();
    std::fs::write(dir.path().join("dev.jsonl"), dev).unwrap();
    let cfg = dir.path().join("reviews.cfg");
    std::fs::write(
        &cfg,
        format!(
            "data_source = reviews\ndomain = beer\naspect = appearance\ntrain_path = {}\ndev_path = {}\nembedding_dim = 8\nhidden_dim = 8\nepochs = 1\n",
            dir.path().join("train.jsonl").display(),
            dir.path().join("dev.jsonl").display()
        ),
    )
    .unwrap();
    let out = dir.path().join("reviews");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("checkpoint.json");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--split", "dev"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(m["S"].is_number() && m["Acc"].is_number());
    assert!(m.get("F1").is_none() && m.get("P").is_none());
    assert_eq!(code(&run(&["eval", "--checkpoint", p(&ckpt), "--split", "annotation"], dir.path())), 2);
}
