use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "num_videos=6",
    "--set",
    "num_test_videos=3",
    "--set",
    "iterations=15",
];

fn smen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smen")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = smen(args);
    assert!(
        out.status.success(),
        "smen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

/// Runs synth, train-miner, gen-masks and train-loc into `root`.
fn build_pipeline(root: &Path) {
    let data = root.join("data");
    let miner = root.join("miner");
    let masks = root.join("masks.txt");
    let loc = root.join("loc");
    ok(&with_small(&["synth", "--out", p(&data)]));
    let train = data.join("train");
    ok(&with_small(&["train-miner", "--corpus", p(&train), "--out", p(&miner)]));
    ok(&["gen-masks", "--miner", p(&miner), "--corpus", p(&train), "--out", p(&masks)]);
    ok(&with_small(&["train-loc", "--corpus", p(&train), "--masks", p(&masks), "--out", p(&loc)]));
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    build_pipeline(root);
    for f in ["miner/checkpoint.prm", "miner/loss_curve.csv", "miner/config.txt", "loc/config.txt", "masks.txt"] {
        assert!(root.join(f).is_file(), "missing {f}");
    }

    let test = root.join("data/test");
    let a = root.join("a.csv");
    let b = root.join("b.csv");
    ok(&["infer", "--loc", p(&root.join("loc")), "--corpus", p(&test), "--out", p(&a)]);
    ok(&["infer", "--loc", p(&root.join("loc")), "--corpus", p(&test), "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let ann = test.join("annotations.tsv");
    let csv = root.join("map.csv");
    let table = ok(&["eval", "--props", p(&a), "--ann", p(&ann), "--csv", p(&csv)]);
    assert!(table.contains("0.30"), "{table}");
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() >= 2);
    ok(&["eval", "--props", p(&a), "--ann", p(&ann), "--band", "anet"]);

    for mode in ["n_only", "s_only", "combo"] {
        ok(&["infer", "--loc", p(&root.join("loc")), "--corpus", p(&test), "--out", p(&a), "--mode", mode]);
    }

    let svg = root.join("cas.svg");
    let train = root.join("data/train");
    let video = std::fs::read_to_string(train.join("annotations.tsv")).unwrap();
    let id = video
        .lines()
        .find(|l| l.starts_with("video\t"))
        .and_then(|l| l.split('\t').nth(1))
        .unwrap()
        .to_string();
    ok(&[
        "plot-cas",
        "--loc",
        p(&root.join("loc")),
        "--corpus",
        p(&train),
        "--video",
        &id,
        "--out",
        p(&svg),
        "--masks",
        p(&root.join("masks.txt")),
    ]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains("<svg") && text.trim_end().ends_with("</svg>"));
    assert!(text.contains("<polyline") && text.contains("fill-opacity"));
}

#[test]
fn slow_only_eval_without_slow_segments_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.tsv");
    let props = dir.path().join("props.csv");
    let data = dir.path().join("data");
    ok(&with_small(&["synth", "--out", p(&data), "--set", "slow_fraction=0"]));
    std::fs::copy(data.join("test/annotations.tsv"), &ann).unwrap();
    std::fs::write(&props, "video_id,class_id,start_sec,end_sec,confidence\ntest_0000,0,0.0,5.0,0.9\n").unwrap();
    let table = ok(&["eval", "--props", p(&props), "--ann", p(&ann), "--slow-only"]);
    assert!(table.contains("| mAP(%) | 0.0 | 0.0 |"), "{table}");
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--cases", "6"]);
    assert!(!out.is_empty());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(smen(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(smen(&["synth", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(smen(&["synth", "--out", p(&out), "--set", "tau=0"]).status.code(), Some(1));
    assert_eq!(smen(&["synth", "--out", p(&out), "--set", "no_such_key=1"]).status.code(), Some(1));
    assert_eq!(smen(&["synth", "--out", p(&out), "--set", "missing_equals"]).status.code(), Some(1));
    assert_eq!(smen(&["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&with_small(&["synth", "--out", p(&data)]));
    let train = data.join("train");
    let fea = std::fs::read_dir(train.join("features")).unwrap().next().unwrap().unwrap().path();
    let mut bytes = std::fs::read(&fea).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&fea, &bytes).unwrap();
    let out = smen(&with_small(&["train-miner", "--corpus", p(&train), "--out", p(&dir.path().join("m"))]));
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("byte 0"), "{msg}");

    let missing = smen(&["eval", "--props", "/nonexistent/p.csv", "--ann", "/nonexistent/a.tsv"]);
    assert_eq!(missing.status.code(), Some(2));
}
