use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_metrics_and_honours_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epochs = 2\n[sq]\nbatch_size = 3");
    let out = dir.path().join("out");
    let o = sqlab(&[
        "run",
        &cfg,
        "--seeds",
        "4..=5",
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("1,4,0,ndr,")));
    assert!(csv.lines().any(|l| l.starts_with("1,5,1,defection,")));
    assert!(!csv.lines().any(|l| l.starts_with("1,0,")));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ndr"));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sq]\ngamma = 1.2");
    let o = sqlab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sq.gamma"));
    let cfg = write_config(dir.path(), "");
    assert_eq!(
        sqlab(&["run", &cfg, "--threads", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        sqlab(&["run", &cfg, "--seeds", "3..3"]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        sqlab(&["run", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
    let junk = dir.path().join("junk.oracle");
    fs::write(&junk, b"not an oracle").unwrap();
    assert_eq!(
        sqlab(&["eval-oracle", junk.to_str().unwrap(), "3"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn sweep_z_then_distill_then_eval_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seeds = [0]\nepochs = 2\nz_values = [1, 2]\n[sq]\nbatch_size = 2\n\
         [distill]\ndataset_size = 40\nepisode_length = 40\n[distill.encoder]\nepochs = 1\n\
         [distill.oracle]\nepochs = 1\n[distill.solo]\nepisodes = 1",
    );
    let out = dir.path().join("sweep");
    let o = sqlab(&["sweep-z", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("median epochs to cooperation"));

    let out = dir.path().join("distill");
    let o = sqlab(&["distill", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let oracle = out.join("seed_0").join("red_defection.oracle");
    let o = sqlab(&["eval-oracle", oracle.to_str().unwrap(), "2", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("other-colour coins"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        sqlab::harness::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 7);
}
