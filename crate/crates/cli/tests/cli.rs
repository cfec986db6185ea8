use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn faders(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faders"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = faders(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 200-segment corpus and a 30-step checkpoint trained on it.
struct Fixture {
    _dir: TempDir,
    corpus: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("synth.jsonl");
        let checkpoint = dir.path().join("m.ckpt");
        ok(&[
            "corpus",
            "synth",
            "--n",
            "200",
            "--seed",
            "4",
            "--labelled-fraction",
            "0.05",
            "--out",
            s(&corpus),
        ]);
        ok(&[
            "train",
            "--corpus",
            s(&corpus),
            "--steps",
            "30",
            "--seed",
            "1",
            "--out",
            s(&checkpoint),
        ]);
        Fixture {
            _dir: dir,
            corpus,
            checkpoint,
        }
    })
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (path, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&["corpus", "synth", "--n", "120", "--seed", seed, "--out", s(path)]);
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().count(), 120);
    let labelled = text
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap().get("arousal").is_some())
        .count();
    assert_eq!(labelled, 2);
}

#[test]
fn usage_errors_exit_one_and_data_errors_exit_two() {
    assert_eq!(faders(&["train"]).status.code(), Some(1));
    assert_eq!(faders(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(faders(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let small = faders(&["corpus", "synth", "--n", "10", "--out", s(&out)]);
    assert_eq!(small.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&small.stderr).contains("InvalidConfig"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let parse = faders(&["eval", "--checkpoint", "m.ckpt", "--corpus", s(&bad)]);
    assert_eq!(parse.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("ParseError"));

    let f = fixture();
    let missing = faders(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("none.ckpt")),
        "--corpus",
        s(&f.corpus),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_and_loss_curve() {
    let f = fixture();
    assert!(f.checkpoint.exists());
    let csv = std::fs::read_to_string(f.checkpoint.with_extension("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("step,"));
    assert_eq!(lines.count(), 30);
}

#[test]
fn eval_prints_a_report() {
    let f = fixture();
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&f.checkpoint),
        "--corpus",
        s(&f.corpus),
        "--samples",
        "10",
        "--steps",
        "4",
    ]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let features = report["features"].as_array().unwrap();
    assert_eq!(features.len(), 2);
    for f in features {
        for key in ["consistency", "restrictiveness", "linearity"] {
            assert!(f[key].as_f64().unwrap() <= 1.0, "{key} in {report}");
        }
    }
    assert_eq!(report["model"], "gm_vae");
    let again = ok(&[
        "eval",
        "--checkpoint",
        s(&f.checkpoint),
        "--corpus",
        s(&f.corpus),
        "--samples",
        "10",
        "--steps",
        "4",
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn sweep_reports_one_row_per_step() {
    let f = fixture();
    let out = ok(&[
        "sweep",
        "--checkpoint",
        s(&f.checkpoint),
        "--corpus",
        s(&f.corpus),
        "--feature",
        "rhythm",
        "--steps",
        "5",
        "--samples",
        "6",
    ]);
    let sweep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = sweep.to_string();
    assert!(text.contains("rhythm"), "{text}");
    assert_eq!(
        faders(&[
            "sweep",
            "--checkpoint",
            s(&f.checkpoint),
            "--corpus",
            s(&f.corpus),
            "--feature",
            "tempo"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn transfer_emits_one_line_per_segment() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let text = std::fs::read_to_string(&f.corpus).unwrap();
    std::fs::write(&input, text.lines().take(3).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let out = ok(&[
        "transfer",
        "--checkpoint",
        s(&f.checkpoint),
        "--input",
        s(&input),
        "--target",
        "1",
    ]);
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["checkpoint_id"].is_string()));

    let bad = faders(&[
        "transfer",
        "--checkpoint",
        s(&f.checkpoint),
        "--input",
        s(&input),
        "--target",
        "2",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn project_writes_two_coordinates_per_test_segment() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    ok(&[
        "project",
        "--checkpoint",
        s(&f.checkpoint),
        "--corpus",
        s(&f.corpus),
        "--out",
        s(&out),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    // The 200-record corpus leaves 20 test segments.
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn ingest_round_trips_jsonl() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.jsonl");
    ok(&["corpus", "ingest", s(&f.corpus), "--out", s(&out)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&f.corpus).unwrap());
    let conflict = faders(&[
        "corpus",
        "ingest",
        s(&f.corpus),
        "--arousal",
        "0.5",
        "--labels",
        "l.csv",
        "--out",
        s(&out),
    ]);
    assert_eq!(conflict.status.code(), Some(1));
}
