//! End-to-end runs of the `spaneit` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spaneit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spaneit")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FAST: [&str; 4] = ["--epochs", "2", "--hidden-dim", "8"];

fn train_fast(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--synth", "40", "--out", out, "--bootstrap", "100"];
    args.extend(FAST);
    args.extend(extra);
    spaneit(&args, dir)
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaneit(&["train", "--help"], dir.path());
    assert_eq!(code(&o), 0);
    let help = stdout(&o);
    for flag in [
        "--data",
        "--synth",
        "--seed",
        "--config",
        "--out",
        "--no-gat",
        "--no-memory",
        "--no-span",
        "--no-entities",
        "--only-text",
        "--bootstrap",
        "--lr",
        "--batch-size",
        "--max-len",
        "--hidden-dim",
        "--heads",
        "--gat-heads",
        "--gat-layers",
        "--memory-size",
        "--num-spans",
        "--window",
        "--dropout",
        "--patience",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    for default in
        ["[default: 8]", "[default: 0.001]", "[default: 42,43,44]", "[default: 7]", "[default: 100]", "[default: 0.5]"]
    {
        assert!(help.contains(default), "missing {default}");
    }
    for cmd in ["stats", "synth", "preprocess", "eval", "ablate", "explain"] {
        assert_eq!(code(&spaneit(&[cmd, "--help"], dir.path())), 0, "{cmd} --help");
    }
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaneit(&["train"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&spaneit(&["train", "--synth", "10", "--frobnicate"], dir.path())), 1);
    assert_eq!(code(&spaneit(&["train", "--data", "missing.csv"], dir.path())), 2);
    assert_eq!(code(&spaneit(&["train", "--synth", "10", "--only-text", "--heads", "3"], dir.path())), 1);
    fs::write(dir.path().join("bad.csv"), "cleaned_tweets,Entity\nx,y\n").unwrap();
    assert_eq!(code(&spaneit(&["stats", "--data", "bad.csv"], dir.path())), 2);
    fs::write(dir.path().join("cfg.txt"), "only_text = true\nuse_gat = true\n").unwrap();
    assert_eq!(code(&spaneit(&["train", "--synth", "10", "--config", "cfg.txt"], dir.path())), 1);
}

#[test]
fn synth_stats_and_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaneit(&["synth", "--synth", "30", "--synth-seed", "7", "--out", "c.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = spaneit(&["stats", "--data", "c.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for class in ["Negative\t10", "Neutral\t10", "Positive\t10"] {
        assert!(text.contains(class), "{text}");
    }
    assert_eq!(stdout(&spaneit(&["stats", "--synth", "30", "--synth-seed", "7"], dir.path())), text);
    let o = spaneit(&["preprocess", "--data", "c.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let dump = stdout(&o);
    assert_eq!(dump.matches("# example").count(), 30);
    assert!(dump.contains("SYN 0 1"));
    assert!(dump.contains("SEM "));
}

#[test]
fn train_is_reproducible_and_eval_reads_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = train_fast(dir.path(), out, &["--seed", "42"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["model_seed42.ckpt", "metrics.txt", "run_manifest.txt"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let manifest = fs::read_to_string(dir.path().join("a/run_manifest.txt")).unwrap();
    assert!(manifest.contains("input_sha256="));
    assert!(manifest.contains("config.hidden_dim=8"));

    let o = spaneit(&["eval", "--ckpt", "a/model_seed42.ckpt", "--synth", "30", "--synth-seed", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout(&o);
    let value =
        |key: &str| -> String { report.lines().find_map(|l| l.strip_prefix(&format!("{key}="))).unwrap().to_string() };
    assert_eq!(value("acc"), value("micro_f1"));
    assert!(report.contains("macro_f1_ci="));
    assert_eq!(code(&spaneit(&["eval", "--ckpt", "nope.ckpt", "--synth", "5"], dir.path())), 2);
    fs::write(dir.path().join("junk.ckpt"), b"SPANEIT-CHECKPOINT\nformat_version=9\nEND\n").unwrap();
    assert_eq!(code(&spaneit(&["eval", "--ckpt", "junk.ckpt", "--synth", "5"], dir.path())), 2);
}

#[test]
fn three_seed_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_fast(dir.path(), "run", &["--seed", "42,43,44"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.txt")).unwrap();
    assert!(metrics.contains("seeds=42,43,44\n"));
    assert!(metrics.contains("n_seeds=3\n"));
    assert!(metrics.contains("acc_std="));
    for seed in [42, 43, 44] {
        assert!(dir.path().join(format!("run/model_seed{seed}.ckpt")).exists());
    }
}

fn read_matrix(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn explain_writes_normalized_deterministic_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_fast(dir.path(), "run", &["--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(
        dir.path().join("ex.csv"),
        "cleaned_tweets,Entity,Entity_Type,Coref_ID,label\n\
         great,tesla,ORG,2,positive\n\
         netflix gains subscribers after new content,netflix,ORG,1,positive\n",
    )
    .unwrap();
    let ckpt = "run/model_seed42.ckpt";
    for (index, out) in [("0", "e0"), ("0", "e0b"), ("1", "e1")] {
        let o = spaneit(&["explain", "--ckpt", ckpt, "--data", "ex.csv", "--index", index, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["entity_token_attention.csv", "entity_span_attention.csv", "memory_vector.csv", "memory_bank.csv"] {
        assert_eq!(
            fs::read(dir.path().join("e0").join(file)).unwrap(),
            fs::read(dir.path().join("e0b").join(file)).unwrap()
        );
    }

    // [CLS] great [SEP] tesla [SEP]
    let (header, rows) = read_matrix(&dir.path().join("e0/entity_token_attention.csv"));
    assert_eq!(header, ["[CLS]", "great", "[SEP]", "tesla", "[SEP]"]);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    let (header, rows) = read_matrix(&dir.path().join("e1/entity_token_attention.csv"));
    assert_eq!(header.len(), 6 + 1 + 3);
    assert_eq!(rows.len(), 2);
    let (spans, rows) = read_matrix(&dir.path().join("e1/entity_span_attention.csv"));
    assert!(!spans.is_empty() && spans.iter().all(|s| s.contains('-')));
    for r in &rows {
        assert_eq!(r.len(), spans.len());
        assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    let (dims, rows) = read_matrix(&dir.path().join("e1/memory_vector.csv"));
    assert_eq!((dims.len(), rows.len()), (8, 1));
    let bank = fs::read_to_string(dir.path().join("e1/memory_bank.csv")).unwrap();
    assert_eq!(bank.lines().count(), 2);

    let o = spaneit(&["explain", "--ckpt", ckpt, "--data", "ex.csv", "--index", "2", "--out", "e2"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn ablate_renders_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--synth", "40", "--seed", "42", "--out", "table.txt"];
    args.extend(FAST);
    let o = spaneit(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(fs::read_to_string(dir.path().join("table.txt")).unwrap(), table);
    let rows: Vec<Vec<&str>> = table.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 7);
    let params = |name: &str| -> usize { rows.iter().find(|r| r[0] == name).unwrap()[1].parse().unwrap() };
    assert!(params("full") > params("w/o-GAT"));
    for r in &rows {
        // columns: name params acc ± std micro ± std macro ± std
        assert_eq!(r.len(), 11);
        assert_eq!(r[2], r[5], "micro-F1 differs from accuracy in {r:?}");
    }
    let o = spaneit(&["ablate", "--synth", "40", "--grid", "full,bogus"], dir.path());
    assert_eq!(code(&o), 1);
}
