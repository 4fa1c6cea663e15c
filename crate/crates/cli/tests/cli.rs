//! End-to-end checks of the `wgdflow` binary: artifact layout, error
//! reporting, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wgdflow"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let mut dir = std::env::temp_dir();
    dir.push(format!("wgdflow_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const SMALL_BANANA: &str = "\
[experiment]
kind = banana
seed = 42

[wgd]
particles = 400
anneal = 40
max_iters = 80

[score]
steps = 60
batch = 128
";

#[test]
fn run_emits_artifacts_and_creates_out_dir() {
    let dir = temp_dir("run");
    let cfg = write_config(&dir, "banana.cfg", SMALL_BANANA);
    let out = dir.join("nested").join("out"); // must be created automatically
    let status = bin()
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["particles.csv", "trace.csv", "diagnostics.csv", "manifest.txt"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2, "trace has no rows");
    assert!(trace.starts_with("t,eta,anneal,err,sm_loss,oracle_kl,oracle_w2,elapsed_ms\n"));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("experiment.kind=banana"));
    assert!(manifest.contains("wgd.particles=400"));
    assert!(manifest.contains("timestamp_unix="));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_schedule_exponent_is_rejected() {
    let dir = temp_dir("badalpha");
    let cfg = write_config(
        &dir,
        "bad.cfg",
        "[experiment]\nkind = banana\n[wgd]\nparticles = 50\nalpha = 1.5\n",
    );
    let output = bin()
        .args(["run", cfg.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("1/2 < alpha <= 1"),
        "error should cite the exponent constraint: {stderr}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_kind_is_named() {
    let dir = temp_dir("badkind");
    let cfg = write_config(&dir, "bad.cfg", "[experiment]\nkind = mystery\n");
    let output = bin()
        .args(["run", cfg.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("experiment.kind"), "{stderr}");
    assert!(stderr.contains("mystery"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn rerun_is_byte_identical_except_manifest_timestamp() {
    let dir = temp_dir("determinism");
    let cfg = write_config(&dir, "banana.cfg", SMALL_BANANA);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["particles.csv", "trace.csv", "diagnostics.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_override_changes_particles() {
    let dir = temp_dir("seedflag");
    let cfg = write_config(&dir, "banana.cfg", SMALL_BANANA);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    bin()
        .args(["run", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
            "--seed",
            "7",
            "--quiet",
        ])
        .status()
        .unwrap();
    let a = std::fs::read(out_a.join("particles.csv")).unwrap();
    let b = std::fs::read(out_b.join("particles.csv")).unwrap();
    assert_ne!(a, b, "different seeds must give different draws");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn theory_check_passes_and_writes_sweeps() {
    let dir = temp_dir("theory");
    let cfg = write_config(
        &dir,
        "theory.cfg",
        "[experiment]\nkind = theory-check\nseed = 42\n[theory]\nnoise_seeds = 10\nsteps = 2000\nnoise_steps = 500\n",
    );
    let out = dir.join("out");
    let status = bin()
        .args([
            "theory-check",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ])
        .status()
        .unwrap();
    assert!(status.success(), "theory check should pass");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("all_pass=true"), "{report}");
    // one row per magnitude plus the header
    let sweep = std::fs::read_to_string(out.join("noise_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4, "{sweep}");
    for name in ["descent_sweep.csv", "contraction_pairs.csv", "convergence.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oversized_step_is_surfaced_with_context() {
    let dir = temp_dir("bigstep");
    // eps0 = 0.9 against variance ratio 4 makes the update matrix lose
    // positive definiteness early in the recursion
    let cfg = write_config(
        &dir,
        "theory.cfg",
        "[experiment]\nkind = theory-check\nseed = 1\n[theory]\nmean0 = 0,0\nvar0 = 4,4\npi_var = 0.05,0.05\neps0 = 0.9\nsteps = 100\nnoise_seeds = 2\nnoise_steps = 50\n",
    );
    let output = bin()
        .args([
            "theory-check",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
            "--quiet",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("too large"),
        "expected a step-too-large error, got: {stderr}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_requires_two_methods() {
    let dir = temp_dir("compare1");
    let cfg = write_config(
        &dir,
        "cmp.cfg",
        "[experiment]\nkind = banana\n[compare]\nmethods = wgd\n",
    );
    let output = bin()
        .args(["compare", cfg.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("at least two methods"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_emits_kde_and_distance_tables() {
    let dir = temp_dir("compare2");
    let cfg = write_config(
        &dir,
        "cmp.cfg",
        "\
[experiment]
kind = banana
seed = 42

[wgd]
particles = 300
anneal = 30
max_iters = 60

[score]
steps = 50
batch = 128

[gvb]
steps = 300
mc_samples = 8

[compare]
methods = wgd,gvb
reference_samples = 2000
projections = 32
",
    );
    let out = dir.join("out");
    let status = bin()
        .args(["compare", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert!(status.success());
    for name in [
        "compare.csv",
        "kde_l1.csv",
        "kde_wgd_x1.csv",
        "kde_wgd_x2.csv",
        "kde_gvb_x1.csv",
        "kde_gvb_x2.csv",
        "manifest.txt",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let compare = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = compare.lines();
    assert_eq!(lines.next().unwrap(), "method,sliced_w2_to_reference,elapsed_ms");
    // banana has a reference sampler, so the distance column is filled
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3);
        assert!(fields[1].parse::<f64>().is_ok(), "bad distance in {line}");
    }
    std::fs::remove_dir_all(&dir).ok();
}
