use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn v2g(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2g"))
        .arg("--out")
        .arg(dir)
        .arg("--sequential")
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "seed = 3\n[fleet]\ncount = 8\n[optimizer]\nk_max = 20\n[simulation]\nhorizon_h = 0.3\n\
         [baselines]\npopulation = 6\nk_max = 10\n[oracle]\nstep_kw = 1e-3\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = v2g(dir.path(), &["-c", &cfg, "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(run.starts_with("# v2g run-record v1\nkind,epoch,index,"));
    assert_eq!(run.lines().filter(|l| l.starts_with("iter,")).count(), 20);
    assert_eq!(run.lines().filter(|l| l.starts_with("step,")).count(), 3);
    let fleet = fs::read_to_string(dir.path().join("fleet.csv")).unwrap();
    assert_eq!(fleet.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 8);
    assert!(dir.path().join("distance.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("epoch 0"));
}

#[test]
fn sweep_oracle_and_compare_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());

    let out = v2g(dir.path(), &["-c", &cfg, "sweep", "--param", "whales", "--values", "1,2", "--runs", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert!(stats.starts_with("# v2g stats v1\n"));
    assert_eq!(stats.lines().count(), 4);

    let out = v2g(dir.path(), &["-c", &cfg, "oracle"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("rate_kw="));

    let out = v2g(dir.path(), &["-c", &cfg, "compare", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let compare = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(compare.starts_with("# v2g compare v1\nmethod,seed,iteration,objective\n"));
    assert_eq!(compare.lines().count(), 2 + 2 * 3 * 10);
}

#[test]
fn config_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[fleet]\nsoc_min = [0.5, 0.1]\n").unwrap();
    let out = v2g(dir.path(), &["-c", bad.to_str().unwrap(), "oracle"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fleet.soc_min"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(v2g(dir.path(), &["-c", missing.to_str().unwrap(), "run"]).status.code(), Some(1));
    assert_eq!(v2g(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(v2g(dir.path(), &["oracle", "--step", "-1"]).status.code(), Some(1));
}

#[test]
fn runtime_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_v2g"))
        .args(["-c", &cfg, "--out"])
        .arg(blocker.join("sub"))
        .arg("run")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn defaults_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = v2g(dir.path(), &["defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("d.toml");
    fs::write(&path, &out.stdout).unwrap();
    assert_eq!(v2g(dir.path(), &["-c", path.to_str().unwrap(), "oracle", "--step", "0.01"]).status.code(), Some(0));
}
