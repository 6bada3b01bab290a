use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use peakforge::config::ExperimentConfig;
use peakforge::io::Manifest;
use sha2::{Digest, Sha256};

const SMALL: &str = r#"
name = "small"

[domain]
lower = [0.0]
upper = [1.0]

[kernel]
variant = "gaussian"
sigma = 0.05
normalization = "unit-peak"

[truth]
peaks = [{ location = [0.37], amplitude = 1.0 }, { location = [0.71], amplitude = 0.6 }]

[observation]
mode = "sampled"
m = 64
snr_db = 30.0
seed = 3

[mesh]
counts = [21]

[solver]
lambda_fraction = 0.05

[adapt]
h_min = 0.0125
"#;

fn peakforge(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_peakforge"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn verify_checksums(out: &Path, m: &Manifest) {
    assert!(!m.artifacts.is_empty());
    for a in &m.artifacts {
        let bytes = fs::read(out.join(&a.path)).unwrap();
        assert_eq!(a.bytes, bytes.len(), "{}", a.path);
        assert_eq!(a.sha256, hex::encode(Sha256::digest(&bytes)), "{}", a.path);
    }
}

#[test]
fn simulate_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = peakforge(dir.path(), SMALL, &["simulate", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.artifacts, mb.artifacts);
    for art in &ma.artifacts {
        assert_eq!(fs::read(a.join(&art.path)).unwrap(), fs::read(b.join(&art.path)).unwrap());
    }
    assert_eq!(ma.config_hash, ExperimentConfig::from_toml(SMALL).unwrap().hash());
    verify_checksums(&a, &ma);
}

#[test]
fn seed_flag_changes_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    peakforge(dir.path(), SMALL, &["simulate", "--out", a.to_str().unwrap()]);
    peakforge(dir.path(), SMALL, &["simulate", "--seed", "99", "--out", b.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("observations.bin")).unwrap(), fs::read(b.join("observations.bin")).unwrap());
}

#[test]
fn solve_and_adapt_write_checked_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["solve", "adapt"] {
        let out = dir.path().join(cmd);
        let o = peakforge(dir.path(), SMALL, &[cmd, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let m = manifest(&out);
        assert!(m.converged && m.error.is_none());
        assert_eq!(m.command, cmd);
        verify_checksums(&out, &m);
    }
    let peaks = fs::read_to_string(dir.path().join("adapt/final/peaks.csv")).unwrap();
    assert_eq!(peaks.lines().next(), Some("clusterId,x,amplitude,supportSize,sign"));
    assert_eq!(peaks.lines().count(), 3);
}

#[test]
fn solve_reads_simulated_observations() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    peakforge(dir.path(), SMALL, &["simulate", "--out", sim.to_str().unwrap()]);
    let bin = sim.join("observations.bin");
    let (a, b) = (dir.path().join("from_file"), dir.path().join("fresh"));
    let o = peakforge(dir.path(), SMALL, &["solve", "--observations", bin.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    peakforge(dir.path(), SMALL, &["solve", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("solution.csv")).unwrap(), fs::read(b.join("solution.csv")).unwrap());
}

#[test]
fn lambda_above_max_gives_no_peaks_and_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = SMALL.replace("lambda_fraction = 0.05", "lambda = 1.0e6");
    let o = peakforge(dir.path(), &cfg, &["solve", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("λ_max"));
    let peaks = fs::read_to_string(out.join("peaks.csv")).unwrap();
    assert_eq!(peaks.lines().count(), 1, "{peaks}");
}

#[test]
fn exhausted_solver_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = SMALL.replace("lambda_fraction = 0.05", "lambda_fraction = 0.001\nmax_iter = 1\ntol = 1.0e-14");
    let o = peakforge(dir.path(), &cfg, &["solve", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(!m.converged);
    verify_checksums(&out, &m);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = peakforge(dir.path(), &SMALL.replace("[mesh]", "[mesh]\nbogus = 1"), &["solve", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn json_only_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = peakforge(dir.path(), SMALL, &["solve", "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("peaks.json").exists());
    assert!(!out.join("peaks.csv").exists());
}
