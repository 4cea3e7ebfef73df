use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riccilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccilab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lists_every_experiment() {
    let out = riccilab(&["list-experiments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in
        ["backward-modified-rate", "dichotomy-sweep", "timeshift-continuity", "scaling-continuity", "tangent-basepoint"]
    {
        assert!(text.contains(id), "{id} missing from {text}");
    }
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "a.toml", "format = 1\nexperiment = \"nope\"\noutput_dir = \"out\"\n");
    assert_eq!(riccilab(&["validate", &unknown]).status.code(), Some(2));
    assert_eq!(riccilab(&["run", &unknown]).status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
    let broken = write_config(dir.path(), "b.toml", "format = 1\nexperiment = \"dichotomy-sweep\nx");
    let out = riccilab(&["validate", &broken]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("byte"));
    assert_eq!(riccilab(&["run", "/no/such/config.toml"]).status.code(), Some(2));
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.toml",
        "format = 1\nexperiment = \"dichotomy-sweep\"\noutput_dir = \"out\"\n[params]\nsamples = 5\n",
    );
    assert!(riccilab(&["validate", &cfg]).status.success());
    let out = riccilab(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = dir.path().join("out").join("manifest.json");
    assert!(manifest.exists());
    let out = Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .args(["replay", manifest.to_str().unwrap()])
        .env("RICCILAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("same     verdicts.json"));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.toml",
        "format = 1\nexperiment = \"tangent-basepoint\"\noutput_dir = \"out\"\n[params]\npoints = 4\nlambdas = [1e-300]\npairs = [{ t0 = -0.05, x0 = 1, t1 = -0.05, y0 = 2 }]\n",
    );
    assert_eq!(riccilab(&["run", &cfg]).status.code(), Some(3));
}

#[test]
fn bad_thread_override_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .arg("list-experiments")
        .env("RICCILAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
