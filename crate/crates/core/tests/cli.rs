use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn salab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = salab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--hidden", "8", "--embed-dim", "8", "--epochs", "2", "--seed", "3"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

fn gen(dir: &Path) {
    ok(dir, &["gen-data", "--data", "data", "--docs", "300", "--seed", "5"]);
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    for f in ["train.jsonl", "validation.jsonl", "test.jsonl", "corpus.cfg", "manifest.txt"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }

    ok(d, &with(&["train", "--data", "data", "--out", "run", "--model", "tr", "--mapping", "sparsemax"], SMALL));
    for f in ["vocab.txt", "model.cfg", "best.ckpt", "last.ckpt", "epochs.tsv", "validation.txt", "validation.json", "manifest.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let tsv = fs::read_to_string(d.join("run/epochs.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.starts_with("epoch\ttrain_loss\tauc_roc\tauc_pr\tbrier"));

    let stdout = ok(d, &["eval", "--data", "data", "--out", "run", "--checkpoint", "run/best.ckpt"]);
    assert!(stdout.contains("auc_roc="));
    for f in ["metrics.txt", "metrics.json", "reliability.csv", "predictions.tsv"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(d.join("run/reliability.csv")).unwrap().lines().count(), 11);

    ok(d, &["heatmap", "--data", "data", "--out", "run", "--checkpoint", "run/best.ckpt", "--docs", "2"]);
    let maps: Vec<_> = fs::read_dir(d.join("run/heatmaps")).unwrap().collect();
    assert!(!maps.is_empty());
}

#[test]
fn training_is_reproducible_from_seed_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    ok(d, &with(&["train", "--data", "data", "--out", "a"], SMALL));
    ok(d, &with(&["train", "--data", "data", "--out", "b"], SMALL));
    for f in ["epochs.tsv", "validation.txt", "validation.json", "best.ckpt", "last.ckpt"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    // the manifest alone reproduces the run (flag overrides only the output dir)
    ok(d, &["train", "--config", "a/manifest.txt", "--out", "c"]);
    assert_eq!(fs::read(d.join("a/best.ckpt")).unwrap(), fs::read(d.join("c/best.ckpt")).unwrap());
    let manifest = fs::read_to_string(d.join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seed=3\n") && manifest.contains("mapping=sparsemax\n"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    fs::write(d.join("run.cfg"), "# test\nhidden=8\nembed_dim=8\nepochs=1\nmapping=softmax\n").unwrap();
    ok(d, &["train", "--config", "run.cfg", "--mapping", "entmax15", "--data", "data", "--out", "r"]);
    let m = fs::read_to_string(d.join("r/model.cfg")).unwrap();
    assert!(m.contains("mapping=entmax15\n") && m.contains("hidden=8\n"));
}

#[test]
fn multi_seed_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    ok(d, &with(&["train", "--data", "data", "--out", "multi", "--seeds", "2"], SMALL));
    let s = fs::read_to_string(d.join("multi/summary.txt")).unwrap();
    assert!(s.contains("auc_roc=") && s.contains(" ± "));
    assert!(d.join("multi/seed3/best.ckpt").exists() && d.join("multi/seed4/best.ckpt").exists());
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--out", "gc"]);
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.lines().count() >= 20);
}

#[test]
fn failures_exit_with_one_line_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases: [(&[&str], i32); 4] = [
        (&["train", "--mapping", "entmax:0.5"], 2),
        (&["train", "--dropout", "1.5"], 2),
        (&["train", "--data", "missing"], 3),
        (&["eval", "--checkpoint", "nowhere/best.ckpt"], 3),
    ];
    for (args, code) in cases {
        let out = salab(d, args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "));
    }
    fs::write(d.join("bad.cfg"), "epochs=ten\n").unwrap();
    assert_eq!(salab(d, &["train", "--config", "bad.cfg"]).status.code(), Some(2));
}
