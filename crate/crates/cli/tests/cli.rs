use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdp_core::data::read_sdp_str;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn sdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdp"))
        .args(args)
        .env_remove("SDP_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "lstm_layers=1\nlstm_hidden=6\nedge_hidden=6\nlabel_hidden=6\nword_dim=6\npos_dim=6\nmax_steps=12\nvalidate_every=6\nmin_count=1\nbatch_tokens=60\n";

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.txt");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let config = write_config(dir);
    let corpus = data("synthetic20.sdp");
    let out = dir.join(out);
    let mut args = vec![
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--dev",
        corpus.to_str().unwrap(),
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    sdp(&args)
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&sdp(&[])), 64);
    assert_eq!(code(&sdp(&["train", "--out", "x"])), 64);
    assert_eq!(code(&sdp(&["eval", "--gold", "a", "--pred", "b", "--colour"])), 64);
    assert_eq!(code(&sdp(&["--help"])), 0);
}

#[test]
fn validate_reports_dag() {
    let o = sdp(&["validate", "--input", data("wants_to_buy.sdp").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "20001001: valid DAG");
}

#[test]
fn validate_rejects_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cycle.sdp");
    fs::write(&p, "1\ta\ta\tX\t-\t+\t_\t_\tR\n2\tb\tb\tX\t-\t+\t_\tR\t_\n\n").unwrap();
    let o = sdp(&["validate", "--input", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("cycle"));
}

#[test]
fn eval_identity_and_misalignment() {
    let g = data("synthetic20.sdp");
    let o = sdp(&["eval", "--gold", g.to_str().unwrap(), "--pred", g.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l == "LF=1.000000"));
    let o = sdp(&["eval", "--gold", g.to_str().unwrap(), "--pred", data("wants_to_buy.sdp").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.sdp");
    fs::write(&p, "1\tonly\n").unwrap();
    let o = sdp(&["validate", "--input", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn gradcheck_passes() {
    let o = sdp(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let lines: Vec<String> = stdout(&o).lines().skip(1).map(str::to_string).collect();
    assert!(lines.len() > 20);
    for l in &lines {
        let cols: Vec<&str> = l.split('\t').collect();
        assert_eq!(cols[3], "ok", "{l}");
        assert!(cols[2].parse::<f64>().unwrap() < 1e-4);
    }
}

#[test]
fn bad_settings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "m", &["--set", "bogus=1"])), 2);
    assert_eq!(code(&train_small(dir.path(), "m", &["--set", "interpolation=1.5"])), 2);
}

#[test]
fn train_parse_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(dir.path(), "m", &["--seed", "4", "--use-char", "--use-lemma"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model = dir.path().join("m");
    for f in ["model.ckpt", "vocab.json", "config.txt", "metrics.tsv"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let sidecar = fs::read_to_string(model.join("config.txt")).unwrap();
    assert!(sidecar.contains("use_char=true") && sidecar.contains("use_lemma=true"));
    assert_eq!(fs::read_to_string(model.join("metrics.tsv")).unwrap().lines().count(), 3);

    let corpus = data("synthetic20.sdp");
    let pred = dir.path().join("pred.sdp");
    let args = ["parse", "--model", model.to_str().unwrap(), "--input", corpus.to_str().unwrap(), "--output", pred.to_str().unwrap()];
    assert_eq!(code(&sdp(&args)), 0);
    let first = fs::read_to_string(&pred).unwrap();
    assert_eq!(read_sdp_str(&first).unwrap().len(), 20);
    assert_eq!(code(&sdp(&args)), 0);
    assert_eq!(fs::read_to_string(&pred).unwrap(), first);

    let o = sdp(&["eval", "--gold", corpus.to_str().unwrap(), "--pred", pred.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for key in ["LP=", "LR=", "LF=", "UP=", "UR=", "UF=", "EM="] {
        assert!(stdout(&o).lines().any(|l| l.starts_with(key)), "{key}");
    }
}

#[test]
fn same_seed_same_metrics_and_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "a", &["--seed", "7"])), 0);
    assert_eq!(code(&train_small(dir.path(), "b", &["--seed", "7"])), 0);
    let config = write_config(dir.path());
    let corpus = data("synthetic20.sdp");
    let out = dir.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_sdp"))
        .args(["train", "--train", corpus.to_str().unwrap(), "--dev", corpus.to_str().unwrap()])
        .args(["--config", &config, "--out", out.to_str().unwrap()])
        .env("SDP_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let read = |d: &str| fs::read_to_string(dir.path().join(d).join("metrics.tsv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn parse_empty_input_and_model_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "m", &[])), 0);
    let model = dir.path().join("m");
    let empty = dir.path().join("empty.sdp");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("out.sdp");
    let o = sdp(&["parse", "--model", model.to_str().unwrap(), "--input", empty.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");

    let sidecar = model.join("config.txt");
    let text = fs::read_to_string(&sidecar).unwrap().replace("lstm_hidden=6", "lstm_hidden=7");
    fs::write(&sidecar, text).unwrap();
    let o = sdp(&["parse", "--model", model.to_str().unwrap(), "--input", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn resume_continues_to_the_same_end_state() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "full", &["--seed", "2"])), 0);
    assert_eq!(code(&train_small(dir.path(), "split", &["--seed", "2", "--set", "max_steps=6"])), 0);
    assert_eq!(code(&train_small(dir.path(), "split", &["--seed", "2", "--resume"])), 0);
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("full", "metrics.tsv"), read("split", "metrics.tsv"));
    assert_eq!(read("full", "model.ckpt"), read("split", "model.ckpt"));
}

#[test]
fn variants_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("study.txt");
    let body: String = SMALL
        .lines()
        .filter(|l| !l.starts_with("max_steps"))
        .map(|l| format!("config.{l}\n"))
        .collect();
    fs::write(&manifest, format!("replicas=2\nsteps=6\nvariant=relu\n{body}")).unwrap();
    let corpus = data("synthetic20.sdp");
    let out = dir.path().join("study");
    let o = sdp(&[
        "variants", "--manifest", manifest.to_str().unwrap(), "--train", corpus.to_str().unwrap(),
        "--dev", corpus.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let replicas = fs::read_to_string(out.join("replicas.tsv")).unwrap();
    assert_eq!(replicas.lines().count(), 5);
    let comparisons = fs::read_to_string(out.join("comparisons.tsv")).unwrap();
    assert_eq!(comparisons.lines().next(), Some("variant\tW\tp"));
    assert!(comparisons.lines().nth(1).unwrap().starts_with("relu\t"));
}
