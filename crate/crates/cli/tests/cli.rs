use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use trackfill_core::corpus::bundled_minicorpus;
use trackfill_core::midi::parse_midi;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trackfill"));
    c.env_remove("TRACKFILL_SEED").env_remove("TRACKFILL_TEMPERATURE");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn sample() -> PathBuf {
    bundled_minicorpus().join("piece_002.mid")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tokenize_then_detokenize_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let tokens = ok(&["tokenize", s(&sample())]);
    let mut child = bin()
        .args(["detokenize", "-", "--out", s(&dir.path().join("back.mid"))])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(tokens.as_bytes()).unwrap();
    assert!(child.wait_with_output().unwrap().status.success());
    assert_eq!(ok(&["tokenize", s(&dir.path().join("back.mid"))]), tokens);

    let original = parse_midi(&std::fs::read(sample()).unwrap(), false).unwrap();
    let back = parse_midi(&std::fs::read(dir.path().join("back.mid")).unwrap(), false).unwrap();
    assert_eq!(original.tracks, back.tracks);
}

#[test]
fn text_format_lists_one_token_per_line() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["tokenize", s(&sample())])).unwrap();
    let text = ok(&["--format", "text", "tokenize", s(&sample())]);
    assert_eq!(text.lines().count(), json["ids"].as_array().unwrap().len());
}

#[test]
fn infill_with_same_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mid");
    let b = dir.path().join("b.mid");
    for out in [&a, &b] {
        ok(&["infill", s(&sample()), "--bars", "2", "--track", "1", "--seed", "7", "--out", s(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let original = parse_midi(&std::fs::read(sample()).unwrap(), false).unwrap();
    let filled = parse_midi(&std::fs::read(&a).unwrap(), false).unwrap();
    for (t, track) in original.tracks.iter().enumerate() {
        for (bar, content) in track.bars.iter().enumerate() {
            if (t, bar) != (1, 2) {
                assert_eq!(&filled.tracks[t].bars[bar], content, "track {t} bar {bar}");
            }
        }
    }
}

#[test]
fn eval_originality_emits_histogram_csv() {
    let out = ok(&["eval-originality", "--n-bars", "4", "--trials", "20"]);
    let mut r = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["bin", "bin_lo", "bin_hi", "count", "percent"]);
    let total: usize = r.records().map(|row| row.unwrap()[3].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 20);
}

#[test]
fn generate_honours_program_and_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.mid");
    let report =
        ok(&["generate", "--n-new", "2", "--program", "30", "--density", "3", "--predictor", "echo", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["new_track_indices"], serde_json::json!([0, 1]));
    assert_eq!(v["programs"][0], "30");
    assert!(out.exists());
}

#[test]
fn train_ngram_reports_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let ex = dir.path().join("ex.jsonl");
    let model = dir.path().join("m.ngram");
    ok(&["make-examples", "--count", "50", "--out", s(&ex)]);
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["train-ngram", "--examples", s(&ex), "--out", s(&model)])).unwrap();
    assert_eq!(v["train_sequences"], 50);
    assert!(v["valid_perplexity"].as_f64().unwrap() > 1.0);
    ok(&[
        "--model",
        s(&model),
        "infill",
        s(&sample()),
        "--track",
        "0",
        "--bars",
        "1-2",
        "--out",
        s(&dir.path().join("i.mid")),
    ]);
}

#[test]
fn failures_exit_with_a_diagnostic_class() {
    let dir = tempfile::tempdir().unwrap();
    let piece = sample();
    let cases: [(&[&str], i32, &str); 4] = [
        (&["infill", "missing.mid", "--track", "0", "--bars", "1", "--out", "x.mid"], 6, "error[io]"),
        (&["--set", "nope=1", "build-tables"], 3, "error[config]"),
        (&["infill", s(&piece), "--track", "99", "--bars", "1", "--out", "x.mid"], 4, "error[input]"),
        (&["infill", s(&piece), "--track", "0", "--bars", "3-1", "--out", "x.mid"], 2, "error[usage]"),
    ];
    for (args, code, class) in cases {
        let out = bin().current_dir(dir.path()).args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with(class), "{args:?}");
    }
}

#[test]
fn flags_override_env_which_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let table = dir.path().join("t.json");
    std::fs::write(&cfg, "temperature = -1.0\n").unwrap();
    let args = ["--config", s(&cfg), "build-tables", "--out", s(&table)];
    assert_eq!(run(&args).status.code(), Some(3));
    let env_fixed = bin().env("TRACKFILL_TEMPERATURE", "0.5").args(args).output().unwrap();
    assert!(env_fixed.status.success());
    let env_bad = bin().env("TRACKFILL_TEMPERATURE", "-2").args(args).output().unwrap();
    assert_eq!(env_bad.status.code(), Some(3));
    let mut flag_fixed = args.to_vec();
    flag_fixed.splice(0..0, ["--temperature", "0.9"]);
    assert!(bin().env("TRACKFILL_TEMPERATURE", "-2").args(&flag_fixed).output().unwrap().status.success());
}
