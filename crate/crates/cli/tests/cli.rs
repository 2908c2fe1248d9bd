use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossattn"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        stderr(o)
    );
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cli_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Every file under `root`, relative to it.
fn tree(root: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn synth(dir: &Path, out: &str, n: &str, seed: &str) -> PathBuf {
    let o = run_in(
        dir,
        &[
            "synth",
            "--num-examples",
            n,
            "--num-keys",
            "10",
            "--num-values",
            "10",
            "--pairs",
            "4",
            "--seed",
            seed,
            "--out",
            out,
        ],
    );
    assert_ok(&o);
    dir.join(out).join("synth.jsonl")
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", "50", "7");
    let b = synth(tmp.path(), "b", "50", "7");
    let c = synth(tmp.path(), "c", "50", "8");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 50);

    let o = run_in(
        tmp.path(),
        &["synth", "--num-examples", "50", "--dev-examples", "10", "--out", "split"],
    );
    assert_ok(&o);
    assert_eq!(fs::read_to_string(tmp.path().join("split/dev.jsonl")).unwrap().lines().count(), 10);
    assert_eq!(
        fs::read_to_string(tmp.path().join("split/train.jsonl")).unwrap().lines().count(),
        40
    );
}

#[test]
fn train_writes_only_inside_out_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "data", "200", "1");
    let conf = cli_fixture("tiny.conf");
    let before = tree(tmp.path());
    let args = |out: &'static str| {
        vec![
            "train".to_string(),
            "--config".into(),
            conf.display().to_string(),
            "--attention".into(),
            "dca".into(),
            "--dataset".into(),
            data.display().to_string(),
            "--max-steps".into(),
            "500".into(),
            "--out".into(),
            out.into(),
        ]
    };
    for out in ["run1", "run2"] {
        let a = args(out);
        let o = run_in(tmp.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_ok(&o);
    }
    let after = tree(tmp.path());
    let created: BTreeSet<_> = after.difference(&before).collect();
    assert!(
        created.iter().all(|p| p.starts_with("run1") || p.starts_with("run2")),
        "{created:?}"
    );
    for f in ["metrics.csv", "best.ckpt", "last.ckpt", "summary.json", "config.txt"] {
        assert!(tmp.path().join("run1").join(f).is_file(), "{f} missing");
        assert_eq!(
            fs::read(tmp.path().join("run1").join(f)).unwrap(),
            fs::read(tmp.path().join("run2").join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(tmp.path().join("run1/metrics.csv")).unwrap();
    assert!(csv.starts_with("step,train_loss,dev_loss,dev_f1,dev_em\n"));
    assert_eq!(csv.lines().count(), 11);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run1/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 500);

    let ckpt = tmp.path().join("run1/best.ckpt");
    for out in ["p1", "p2"] {
        let o = run_in(
            tmp.path(),
            &[
                "predict",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--dataset",
                data.to_str().unwrap(),
                "--out",
                out,
            ],
        );
        assert_ok(&o);
    }
    let p1 = fs::read(tmp.path().join("p1/predictions.json")).unwrap();
    assert_eq!(p1, fs::read(tmp.path().join("p2/predictions.json")).unwrap());
    let preds: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&p1).unwrap();
    assert_eq!(preds.len(), 200);

    let o = run_in(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--decode",
            "constrained",
            "--out",
            "ev",
        ],
    );
    assert_ok(&o);
    assert!(tmp.path().join("ev/report.json").is_file() && tmp.path().join("ev/predictions.json").is_file());
}

#[test]
fn train_rejects_bad_input_before_training() {
    let tmp = TempDir::new().unwrap();
    let o = run_in(tmp.path(), &["train", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--dataset"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").exists());

    let o = run_in(tmp.path(), &["train", "--attention", "bogus", "--dataset", "x.jsonl", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for m in ["bidaf", "coattention", "hybrid", "dca"] {
        assert!(err.contains(m), "{err}");
    }

    let o = run_in(tmp.path(), &["train", "--dataset", "missing.jsonl", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"));
    assert!(!tmp.path().join("o").exists());

    let o = run_in(tmp.path(), &["train", "--dataset", "x.jsonl", "--colour", "red", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run_in(tmp.path(), &["train", "--dataset", "x.jsonl", "--set", "h=0", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_scores_error_table_fixture() {
    let tmp = TempDir::new().unwrap();
    let dataset = core_fixture("error_table.json");
    let o = run_in(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            dataset.to_str().unwrap(),
            "--predictions",
            core_fixture("error_table_hybrid.json").to_str().unwrap(),
            "--out",
            "hy",
        ],
    );
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("hy/report.json")).unwrap()).unwrap();
    let f1 = report["f1"].as_f64().unwrap();
    assert!((f1 - 100.0 * (0.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-9, "{f1}");
    assert!((report["em"].as_f64().unwrap() - 100.0 / 3.0).abs() < 1e-9);
    let table = fs::read_to_string(tmp.path().join("hy/report.txt")).unwrap();
    let header = table.lines().next().unwrap();
    for t in ["what", "how", "who", "when", "which", "where", "why"] {
        assert!(header.split_whitespace().any(|c| c == t), "{header}");
    }
    assert_eq!(report["per_type"]["what"]["count"], 3);

    let gold = serde_json::json!({
        "cbd": "south coast metro",
        "apollo": "flammable cabin and space suit materials",
        "primes": "the prime number theorem",
    });
    let perfect = tmp.path().join("perfect.json");
    fs::write(&perfect, gold.to_string()).unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            dataset.to_str().unwrap(),
            "--predictions",
            perfect.to_str().unwrap(),
            "--out",
            "pf",
        ],
    );
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("pf/report.json")).unwrap()).unwrap();
    assert_eq!((report["f1"].as_f64(), report["em"].as_f64()), (Some(100.0), Some(100.0)));
}

#[test]
fn eval_rejects_a_corrupt_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"NOTACKPT....").unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            bad.to_str().unwrap(),
            "--dataset",
            core_fixture("error_table.json").to_str().unwrap(),
            "--out",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("corrupt checkpoint"), "{}", stderr(&o));

    let o = run_in(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            core_fixture("error_table.json").to_str().unwrap(),
            "--out",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eda_matches_the_hand_tally() {
    let tmp = TempDir::new().unwrap();
    let o = run_in(
        tmp.path(),
        &["eda", "--dataset", core_fixture("eda20.json").to_str().unwrap(), "--out", "eda"],
    );
    assert_ok(&o);
    let got: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("eda/stats.json")).unwrap()).unwrap();
    let want: serde_json::Value = serde_json::from_str(&fs::read_to_string(core_fixture("eda20_expected.json")).unwrap()).unwrap();
    assert_eq!(got, want);
    assert!(fs::read_to_string(tmp.path().join("eda/stats.txt"))
        .unwrap()
        .contains("below 5: true"));

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = run_in(tmp.path(), &["eda", "--dataset", empty.to_str().unwrap(), "--out", "e2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn gradcheck_passes_for_every_mechanism() {
    let tmp = TempDir::new().unwrap();
    let o = run_in(tmp.path(), &["gradcheck", "--out", "gc"]);
    assert_ok(&o);
    let lines = stdout(&o);
    assert_eq!(lines.lines().filter(|l| l.ends_with(" ok")).count(), 20);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(tmp.path().join("gc/gradcheck.json")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r["max_relative_error"].as_f64().unwrap() < 1e-4));

    let o = run_in(tmp.path(), &["gradcheck", "--attention", "hybrid", "--trainable-similarity"]);
    assert_ok(&o);
    assert_eq!(tree(tmp.path()).len(), 1);
}

#[test]
fn sweep_over_the_tuning_grid_emits_one_row_per_cell() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "data", "30", "2");
    let o = run_in(
        tmp.path(),
        &[
            "sweep",
            "--grid",
            cli_fixture("tuning_grid.txt").to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--max-steps",
            "2",
            "--set",
            "eval_every=2",
            "--set",
            "char_cnn=false",
            "--out",
            "sw",
        ],
    );
    assert_ok(&o);
    let csv = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dropout,learning rate,hidden size,glove,batch-size,F1,EM");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("0.15,0.001,200,100,100,"));
    assert!(lines[5].starts_with("0.1,0.0001,300,300,50,"));
    for k in 0..5 {
        assert!(tmp.path().join(format!("sw/cell-{k}/metrics.csv")).is_file());
    }
}
