use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trajforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajforge"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/envs").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rounds = 2\ncalls_per_round = 3\ntrajectories = 5\n");
    let out = dir.path().join("out.jsonl");
    let run = trajforge(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9", "--workers", "2",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("retained 5"));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 20);

    let check = trajforge(&["validate", "--in", out.to_str().unwrap()]);
    assert!(check.status.success());
    assert!(String::from_utf8_lossy(&check.stdout).contains("20 samples over 5 trajectories"));
}

#[test]
fn seed_and_worker_overrides_keep_output_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "env_id = \"filesys\"\nrounds = 2\ncalls_per_round = 3\ntrajectories = 8\n");
    let mut files = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}.jsonl"));
        let run = trajforge(&[
            "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3", "--workers", workers,
        ]);
        assert!(run.status.success());
        files.push(std::fs::read(out).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn validate_rejects_a_tampered_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rounds = 1\ncalls_per_round = 2\ntrajectories = 2\n");
    let out = dir.path().join("out.jsonl");
    assert!(trajforge(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(1);
    std::fs::write(&out, lines.join("\n") + "\n").unwrap();
    let check = trajforge(&["validate", "--in", out.to_str().unwrap()]);
    assert!(!check.status.success());
}

#[test]
fn remote_backend_without_credential_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rounds = 1\ncalls_per_round = 2\ntrajectories = 2\n\n[remote]\nbase_url = \"http://127.0.0.1:9\"\nmodel = \"m\"\napi_key_env_var = \"TRAJFORGE_TEST_UNSET_KEY\"\n",
    );
    let out = dir.path().join("out.jsonl");
    let run = Command::new(env!("CARGO_BIN_EXE_trajforge"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--backend", "remote"])
        .env_remove("TRAJFORGE_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert!(!run.status.success());
    assert!(!out.exists());
}

#[test]
fn env_check_accepts_builtin_specs_and_rejects_garbage() {
    for name in ["ticketing.json", "filesys.json"] {
        let check = trajforge(&["env-check", "--env", fixture(name).to_str().unwrap()]);
        assert!(check.status.success(), "{name}: {}", String::from_utf8_lossy(&check.stderr));
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"env_id\": \"x\", \"tools\": []}").unwrap();
    assert!(!trajforge(&["env-check", "--env", bad.to_str().unwrap()]).status.success());
}

#[test]
fn missing_output_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rounds = 1\ncalls_per_round = 1\ntrajectories = 1\n");
    let run = trajforge(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("output path"));
}
