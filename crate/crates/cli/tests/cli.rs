use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const COMMANDS: [&str; 11] = [
    "synth",
    "encode",
    "train-detector",
    "train-descriptor",
    "detect",
    "match",
    "eval-reproj",
    "eval-disparity",
    "eval-iou",
    "gradcheck",
    "bench",
];

fn evpoint(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evpoint"))
        .args(args)
        .current_dir(dir)
        .env_remove("EVPOINT_THREADS")
        .output()
        .expect("spawn evpoint")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = evpoint(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "[training]\nepochs = 1\nbatch_size = 4\n[homography]\ncount = 4\n[synth]\nwidth = 64\nheight = 48\nduration = 200000\ntx = 16\nty = 8\n";

/// synth → encode → train-detector → detect → match → eval-reproj, with
/// the working directory's files returned by name.
fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("small.ini"), SMALL).unwrap();
    let t = ["--threads", threads];
    ok(dir, &[&t[..], &["synth", "--config", "small.ini", "--seed", "3", "--mask-at", "110000"]].concat());
    ok(dir, &[&t[..], &["encode", "--events", "events.evs", "--t-base", "60000", "--dt", "20000", "--out", "a.ppm"]].concat());
    ok(dir, &[&t[..], &["encode", "--events", "events.evs", "--t-base", "100000", "--dt", "20000", "--out", "b.ppm"]].concat());
    let train = ok(
        dir,
        &[&t[..], &["train-detector", "--events", "events.evs", "--config", "small.ini", "--seed", "5", "--samples-per-stream", "4", "--loss-out", "loss.csv"]].concat(),
    );
    assert!(train.contains("epoch 0"));
    ok(dir, &[&t[..], &["detect", "--weights", "detector.epw", "--frame", "a.ppm", "--out", "a.epf"]].concat());
    ok(dir, &[&t[..], &["detect", "--weights", "detector.epw", "--frame", "b.ppm", "--out", "b.epf"]].concat());
    ok(dir, &[&t[..], &["match", "--a", "a.epf", "--b", "b.epf"]].concat());
    let reproj = ok(
        dir,
        &[&t[..], &["eval-reproj", "--events", "events.evs", "--t1", "60000", "--t2", "100000", "--weights", "detector.epw", "--mask", "mask.pgm", "--seed", "1"]].concat(),
    );
    assert!(reproj.contains("reprojection error"));
    std::fs::write(dir.join("reproj.txt"), reproj).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p: PathBuf = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn smoke_pipeline_is_reproducible_across_runs_and_thread_counts() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = pipeline(d1.path(), "1");
    let b = pipeline(d2.path(), "3");
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["events.evs", "mask.pgm", "a.ppm", "detector.epw", "a.epf", "matches.csv", "loss.csv"] {
        assert!(names.contains(&f), "missing {f}");
    }
    assert_eq!(a, b);
}

#[test]
fn help_for_every_command() {
    let dir = tempfile::tempdir().unwrap();
    for c in COMMANDS {
        let out = ok(dir.path(), &[c, "--help"]);
        assert!(out.contains("--threads"), "{c}");
        assert!(out.contains("Usage"), "{c}");
    }
    let top = ok(dir.path(), &["--help"]);
    for c in COMMANDS {
        assert!(top.contains(c), "{c} missing from top-level help");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evpoint(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(evpoint(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(evpoint(dir.path(), &["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(evpoint(dir.path(), &["match", "--a", "nope.epf", "--b", "nope.epf"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.evs"), b"EVS0garbage").unwrap();
    let out = evpoint(dir.path(), &["encode", "--events", "bad.evs", "--t-base", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    std::fs::write(dir.path().join("bad.ini"), "[training]\nlrr = 0.01\n").unwrap();
    assert_eq!(evpoint(dir.path(), &["synth", "--config", "bad.ini"]).status.code(), Some(2));
}

#[test]
fn encode_empty_window_is_background() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "# 5,4\n1,1,1000,1\n").unwrap();
    ok(dir.path(), &["encode", "--events", "e.csv", "--t-base", "500000", "--dt", "1000"]);
    let ppm = std::fs::read(dir.path().join("frame.ppm")).unwrap();
    let header = b"P6\n5 4\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert!(ppm[header.len()..].iter().all(|&v| v == 0));
    assert_eq!(ppm.len(), header.len() + 5 * 4 * 3);
}

#[test]
fn eval_disparity_on_oracle_matches() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "# 40,30\n20,10,5\n30,12,7.5\n").unwrap();
    std::fs::write(dir.path().join("m.csv"), "ax,ay,bx,by,score\n20,10,15,10,1\n30,12,22.5,12,1\n").unwrap();
    let out = ok(dir.path(), &["eval-disparity", "--matches", "m.csv", "--disparity", "d.csv", "--sigma", "3,6,9"]);
    assert_eq!(out.matches("1.0000").count(), 3, "{out}");
}

#[test]
fn eval_iou_counts_masked_matches() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = b"P5\n4 1\n255\n".to_vec();
    pgm.extend_from_slice(&[255, 255, 0, 0]);
    std::fs::write(dir.path().join("m.pgm"), &pgm).unwrap();
    std::fs::write(dir.path().join("m.csv"), "ax,ay,bx,by,score\n0,0,1,0,1\n3,0,0,0,1\n").unwrap();
    let out = ok(dir.path(), &["eval-iou", "--matches", "m.csv", "--mask-a", "m.pgm", "--mask-b", "m.pgm"]);
    assert!(out.contains("0.5000"), "{out}");
}
