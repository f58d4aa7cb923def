use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusetrack"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn metric(csv: &str, name: &str) -> f64 {
    csv.lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no `{name}` in report"))
        .parse()
        .unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let spec = scenario("noisy.toml");
    ok(&["simulate", "--spec", s(&spec), "--out", s(&a), "--seed", "3"]);
    ok(&["simulate", "--spec", s(&spec), "--out", s(&b), "--seed", "3"]);
    ok(&["simulate", "--spec", s(&spec), "--out", s(&c), "--seed", "4"]);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
    assert_ne!(read_dir_sorted(&a), read_dir_sorted(&c));
}

#[test]
fn smoke_pipeline_tracks_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let fused = tmp.path().join("fused");
    let res = tmp.path().join("res");
    let report = tmp.path().join("report.csv");
    ok(&["simulate", "--spec", s(&scenario("smoke.toml")), "--out", s(&seq)]);
    ok(&["fuse", "--in", s(&seq), "--out", s(&fused)]);
    ok(&["track", "--in", s(&seq), "--out", s(&res)]);
    ok(&["eval", "--gt", s(&seq), "--results", s(&res), "--out", s(&report), "--by-range"]);

    let csv = fs::read_to_string(&report).unwrap();
    assert_eq!(metric(&csv, "mota"), 1.0);
    assert_eq!(metric(&csv, "id_switches"), 0.0);
    assert!(tmp.path().join("report.ranges.csv").exists());

    let diag = fs::read_to_string(fused.join("fusion.csv")).unwrap();
    assert_eq!(diag.lines().count(), 41);
    assert!(fused.join("observations.txt").exists());
}

#[test]
fn tracking_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    ok(&["simulate", "--spec", s(&scenario("noisy.toml")), "--out", s(&seq), "--seed", "9"]);
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    ok(&["track", "--in", s(&seq), "--out", s(&r1)]);
    ok(&["track", "--in", s(&seq), "--out", s(&r2)]);
    assert_eq!(read_dir_sorted(&r1), read_dir_sorted(&r2));
}

#[test]
fn ablation_flags_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    ok(&["simulate", "--spec", s(&scenario("smoke.toml")), "--out", s(&seq)]);
    for flags in [
        &["--no-flow"][..],
        &["--detections-only"],
        &["--coupling", "off"],
        &["--2d-only"],
    ] {
        let out_dir = tmp.path().join(flags.join("_"));
        let mut args = vec!["track", "--in", s(&seq), "--out", s(&out_dir)];
        args.extend_from_slice(flags);
        let out = ok(&args);
        assert!(out_dir.join("results.txt").exists());
        assert!(!String::from_utf8_lossy(&out.stdout).contains("full"), "{flags:?}");
    }
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = run(&["track", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = run(&["track", "--in", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[tracker]\ngamma = -1.0\n").unwrap();
    let seq = tmp.path().join("seq");
    ok(&["simulate", "--spec", s(&scenario("smoke.toml")), "--out", s(&seq)]);
    let out = run(&["track", "--in", s(&seq), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tracker.gamma"));

    fs::write(seq.join("detections.txt"), "0 -1 Car 0 0 0 1 2 3\n").unwrap();
    let out = run(&["fuse", "--in", s(&seq), "--out", s(&tmp.path().join("f"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detections.txt:1"));
}
