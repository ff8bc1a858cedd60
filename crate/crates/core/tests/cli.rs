use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qtube::cli::{FitConfig, RunManifest};
use qtube::kernel::KernelSpec;
use qtube::models::{CenterSpec, Design, ModelSpec, NoiseKind};
use qtube::solver::SolverOptions;
use sha2::{Digest, Sha256};

fn qtube(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtube"))
        .args(args)
        .env_remove("QTUBE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit_config(dir: &Path) -> std::path::PathBuf {
    let cfg = FitConfig {
        data: None,
        model: Some(ModelSpec {
            noise: NoiseKind::Power { phi: 1.0 },
            center: CenterSpec::Default { dim: 1 },
        }),
        design: Design::Uniform { dim: 1 },
        t: Some(40),
        seed: 5,
        kernel: KernelSpec::gaussian(0.2).unwrap(),
        q: 1.5,
        eps: 0.05,
        lambda: 0.01,
        solver: SolverOptions::default(),
    };
    let p = dir.join("fit_in.json");
    fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn exit_codes() {
    assert_eq!(qtube(&["--help"]).status.code(), Some(0));
    assert_eq!(qtube(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qtube(&["calc-rate", "--q", "2", "--alpha", "1", "--eta", "inf"]).status.code(), Some(2));
    assert_eq!(qtube(&["calc-rate", "--q", "0.5", "--phi", "1"]).status.code(), Some(2));
    assert_eq!(qtube(&["fit"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"q": 2, "lambda": 0.1, "kernel": {"kind": "linear"}, "typo": 1}"#).unwrap();
    assert_eq!(qtube(&["fit", "--config", path(&bad)]).status.code(), Some(2));

    let cfg = fit_config(dir.path());
    let out = dir.path().join("o");
    assert_eq!(
        qtube(&["fit", "--config", path(&cfg), "--lambda", "-1", "--out", path(&out)]).status.code(),
        Some(2)
    );
}

#[test]
fn calc_rate_prints_exponent() {
    let o = qtube(&["calc-rate", "--q", "2", "--phi", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["lambda_exp"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(v["constraint_ok"], true);

    let o = qtube(&["calc-rate", "--q", "2", "--w", "0.5", "--alpha", "1", "--eta", "inf"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["lambda_exp"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn fit_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fit_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(qtube(&["fit", "--config", path(&cfg), "--out", path(&a)]).status.code(), Some(0));
    let manifest: RunManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let digest = format!("{:x}", Sha256::digest(fs::read(a.join("config.json")).unwrap()));
    assert_eq!(manifest.config_hash, digest);
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.seed, 5);

    let fit: serde_json::Value = serde_json::from_slice(&fs::read(a.join("fit.json")).unwrap()).unwrap();
    for key in ["coeffs", "residuals", "support", "objective_trace", "converged", "iterations", "rkhs_norm_sq"] {
        assert!(fit.get(key).is_some(), "missing {key}");
    }
    assert_eq!(fit["coeffs"].as_array().unwrap().len(), 40);

    let replay = a.join("config.json");
    assert_eq!(qtube(&["fit", "--config", path(&replay), "--out", path(&b)]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("fit.json")).unwrap(), fs::read(b.join("fit.json")).unwrap());
    assert_eq!(fs::read(a.join("config.json")).unwrap(), fs::read(b.join("config.json")).unwrap());
}

#[test]
fn rates_replay_and_thread_count_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = ["rates", "--q", "2", "--T-grid", "32,64", "--repeats", "2", "--seed", "9"];
    let run = |extra: &[&str]| {
        let mut v: Vec<&str> = args.to_vec();
        v.extend_from_slice(extra);
        qtube(&v)
    };
    assert_eq!(run(&["--out", path(&a), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(run(&["--out", path(&c), "--threads", "3"]).status.code(), Some(0));
    let replay = a.join("config.json");
    assert_eq!(qtube(&["rates", "--config", path(&replay), "--out", path(&b)]).status.code(), Some(0));
    for f in ["report.json", "rows.csv", "scatter.csv", "config.json"] {
        let first = fs::read(a.join(f)).unwrap();
        assert_eq!(first, fs::read(b.join(f)).unwrap(), "{f} differs on replay");
        assert_eq!(first, fs::read(c.join(f)).unwrap(), "{f} differs across thread counts");
    }
    let rows = fs::read_to_string(a.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn sparsity_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    fs::write(
        &cfg,
        r#"{
  "model": {"noise": {"kind": "power", "phi": 1.0}, "center": {"kind": "default", "dim": 1}},
  "T": 50,
  "seed": 3,
  "kernel": {"kind": "gaussian", "bandwidth": 0.2},
  "q": 1.5,
  "lambda": 0.01,
  "eps_grid": [0.3, 0.0, 0.1],
  "n_mc": 500
}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = qtube(&["sparsity", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sparsity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps,ratio,objective,lr_error,converged");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,1,"));
}

#[test]
fn verify_quick() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtube(&["verify", "--quick", "--out", path(dir.path())]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("SKIP experiments.rate_sweep_"));
    assert!(text.lines().last().unwrap().ends_with(", 0 failed"));
    let checks: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}
