//! The `rsde` binary on a seconds-scale configuration.

use std::path::Path;
use std::process::Command;

const SMOKE: &str = r#"
seed = 1
[sde]
family = "vp"
dim = 2
[train]
steps = 30
methods = ["standard", "risk-sensitive"]
[sample]
count = 200
steps = 40
[data]
n = 400
[eval]
reference_count = 200
prd = { clusters = 5, runs = 1, angles = 51 }
[stability]
samples = 2000
null_repetitions = 5
times = [0.1, 0.5]
"#;

fn rsde(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rsde"))
        .current_dir(dir)
        .env("RSDE_THREADS", "2")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn pipeline_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), SMOKE).unwrap();
    let ok = |args: &[&str]| {
        let out = rsde(p, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["generate-data", "-c", "c.toml", "-o", "d.csv"]);
    ok(&["impute", "-i", "d.csv", "-o", "imp.csv", "--mask-fraction", "0.05"]);
    ok(&["train", "-c", "c.toml", "-m", "risk-sensitive", "-o", "m.ckpt", "--data", "imp.csv"]);
    ok(&["sample", "--checkpoint", "m.ckpt", "-o", "s1.csv", "-n", "50", "--steps", "20"]);
    ok(&["--deterministic", "sample", "--checkpoint", "m.ckpt", "-o", "s2.csv", "-n", "50", "--steps", "20"]);
    assert_eq!(std::fs::read(p.join("s1.csv")).unwrap(), std::fs::read(p.join("s2.csv")).unwrap());
    let json = ok(&["evaluate", "--samples", "s1.csv", "--reference", "d.csv", "-c", "c.toml"]);
    assert!(json.contains("\"frechet\""));
    ok(&["instability-scan", "-c", "c.toml", "-o", "scan.csv"]);
    let report = ok(&["stability-report", "-c", "c.toml", "-o", "report"]);
    assert!(report.contains("r = 1: stable on [0.2590, 1]"), "{report}");
    ok(&["run", "-c", "c.toml", "-o", "run"]);
    for f in ["run/metrics.json", "run/manifest.json", "run/plots/risk-sensitive.svg", "report/intervals.csv"] {
        assert!(p.join(f).exists(), "{f}");
    }
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "[sde]\nfamily = \"vp\"\ndim = 2\n[train]\nstepz = 1\n").unwrap();
    let out = rsde(p, &["run", "-c", "bad.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stepz") && err.contains("line 5"), "{err}");
    let out = rsde(p, &["sample", "--checkpoint", "missing.ckpt", "-o", "x.csv"]);
    assert!(!out.status.success());
}
