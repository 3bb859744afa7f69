use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stimopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stimopt"))
        .current_dir(dir)
        .env_remove("PERCEPT_DATA_DIR")
        .args(["--data-dir", "data"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stimopt-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn help_and_usage_errors() {
    let dir = scratch("usage");
    assert_eq!(code(&stimopt(&dir, &["--help"])), 0);
    assert_eq!(code(&stimopt(&dir, &["frobnicate"])), 1);
    assert_eq!(code(&stimopt(&dir, &["--resolution", "5x5", "eval"])), 1);
}

#[test]
fn bad_config_key_is_a_config_error() {
    let dir = scratch("config");
    fs::write(dir.join("bad.conf"), "train.surrogate.wings = 3\n").unwrap();
    let o = stimopt(&dir, &["--config", "bad.conf", "eval"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_without_checkpoints_is_a_missing_prerequisite() {
    let dir = scratch("prereq");
    let o = stimopt(&dir, &["--run-dir", "runs/empty", "eval"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn render_writes_a_percept_pgm() {
    let dir = scratch("render");
    let mut amps = vec!["0"; 60];
    amps[27] = "1";
    fs::write(dir.join("stim.txt"), amps.join(" ")).unwrap();
    let o = stimopt(&dir, &["render", "stim.txt", "-o", "out.pgm"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(dir.join("out.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
    assert!(pgm.len() > 784);

    fs::write(dir.join("short.txt"), vec!["0.5"; 59].join(" ")).unwrap();
    assert_eq!(code(&stimopt(&dir, &["render", "short.txt", "-o", "x.pgm"])), 1);
    fs::write(dir.join("hot.txt"), vec!["2"; 60].join(" ")).unwrap();
    assert_eq!(code(&stimopt(&dir, &["render", "hot.txt", "-o", "x.pgm"])), 1);
}

#[test]
fn verify_passes_on_the_committed_goldens() {
    let dir = scratch("verify");
    let o = stimopt(&dir, &["verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
