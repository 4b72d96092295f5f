use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subspace"));
    c.env_remove("SUBSPACE_OUTPUT_DIR");
    c
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quadratic.toml")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_to(dir: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg("run").arg("-c").arg(config_path()).arg("--output-dir").arg(dir).args(["--steps", "60"]);
    c.args(extra).output().unwrap()
}

#[test]
fn run_writes_documented_columns_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(run_to(&a, &[]));
    ok(run_to(&b, &[]));
    let csv = fs::read_to_string(a.join("quadratic.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,loss,grad_norm,hamiltonian,orthodefect_P,lr,wall_ms_pupdate");
    assert_eq!(csv.lines().count(), 61);
    assert_eq!(fs::read(a.join("quadratic.csv")).unwrap(), fs::read(b.join("quadratic.csv")).unwrap());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("quadratic.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["steps_completed"], 60);
}

#[test]
fn malformed_config_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = fs::read_to_string(config_path()).unwrap().replace("rank = 8", "rank = 99");
    fs::write(&bad, text).unwrap();
    let out_dir = tmp.path().join("out");
    let out = bin().arg("run").arg("-c").arg(&bad).arg("--output-dir").arg(&out_dir).output().unwrap();
    assert!(!out.status.success());
    assert!(!out_dir.exists());

    fs::write(&bad, "[problem]\nname = \"quadratic\"\nn = 4\n").unwrap();
    let out = bin().arg("run").arg("-c").arg(&bad).arg("--output-dir").arg(&out_dir).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!out_dir.exists());

    // an override can make a valid file invalid too
    let out = run_to(&out_dir, &["--lr", "-1"]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    ok(run_to(&full, &[]));
    ok(run_to(&part, &["--stop-after", "25"]));
    let cp = part.join("quadratic.checkpoint.json");
    assert!(cp.exists());
    ok(run_to(&part, &["--resume", cp.to_str().unwrap()]));
    assert_eq!(fs::read(full.join("quadratic.csv")).unwrap(), fs::read(part.join("quadratic.csv")).unwrap());
}

#[test]
fn output_dir_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("env");
    let flag_dir = tmp.path().join("flag");
    let mut c = bin();
    c.env("SUBSPACE_OUTPUT_DIR", &env_dir).arg("run").arg("-c").arg(config_path()).args(["--steps", "5"]);
    ok(c.output().unwrap());
    assert!(env_dir.join("quadratic.csv").exists());

    let mut c = bin();
    c.env("SUBSPACE_OUTPUT_DIR", &env_dir)
        .arg("run")
        .arg("-c")
        .arg(config_path())
        .args(["--steps", "5", "--name", "flagged", "--output-dir"])
        .arg(&flag_dir);
    ok(c.output().unwrap());
    assert!(flag_dir.join("flagged.csv").exists());
    assert!(!env_dir.join("flagged.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = bin();
    c.arg("sweep")
        .arg("-c")
        .arg(config_path())
        .arg("--output-dir")
        .arg(tmp.path())
        .args(["--steps", "30", "--axis", "rank", "--values", "2,8,full", "--seeds", "0,1"]);
    let out = ok(c.output().unwrap());
    let csv = fs::read_to_string(tmp.path().join("quadratic.sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("non-increasing in rank"));
}

#[test]
fn bench_and_verify_subcommands() {
    let out = ok(bin()
        .args(["bench", "--n", "32", "--m", "16", "--k", "4", "--repeats", "3", "--svd-repeats", "2", "--json"])
        .output()
        .unwrap());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["ratio"].as_f64().unwrap() > 0.0);

    let out = ok(bin().args(["verify", "--only", "4,9"]).output().unwrap());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);

    assert!(!bin().args(["verify", "--only", "42"]).output().unwrap().status.success());
}
