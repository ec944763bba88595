use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn ctsteam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsteam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A short drive so the end-to-end commands stay quick.
fn short_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("short.toml");
    std::fs::write(
        &path,
        format!(
            "seed = 3\n[sim]\nduration = 12.0\n[metric]\nsegment_lengths = [20.0, 40.0]\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

/// `delta_xi` column of a bias-demo table.
fn delta_column(out: &str) -> Vec<f64> {
    out.lines()
        .filter_map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            match cols.as_slice() {
                [dof, d, _] if dof.parse::<usize>().is_ok() => d.parse().ok(),
                _ => None,
            }
        })
        .collect()
}

#[test]
fn bias_demo_reproduces_the_closed_form() {
    let o = ctsteam(&["bias-demo", "--a", "1", "--point", "0,1,0", "--order", "wnoa"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("wnoa: m = 49"), "{out}");
    let d = delta_column(&out);
    let expected = [-65.0 / 196.0, 1.0 / 49.0, 0.0, 0.0, 0.0, -8.0 / 49.0];
    assert_eq!(d.len(), 6);
    for (a, b) in d.iter().zip(expected) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn bias_demo_wnoj_has_no_bias() {
    let o = ctsteam(&["bias-demo", "--a", "1", "--point", "0,1,0", "--order", "wnoj"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(!out.contains("m ="));
    assert!(delta_column(&out).iter().all(|d| d.abs() < 1e-8), "{out}");
}

#[test]
fn bias_demo_runs_both_orders_by_default() {
    let o = ctsteam(&["bias-demo", "--a", "-0.5", "--point", "1,0,2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("wnoa: m =") && out.contains("wnoj:"));
    assert_eq!(delta_column(&out).len(), 12);
}

#[test]
fn invalid_input_exits_with_validation_error() {
    for args in [
        vec!["bias-demo", "--a", "1", "--point", "0,1"],
        vec!["bias-demo", "--a", "1", "--point", "0,1,0", "--order", "wnox"],
        vec!["bias-demo", "--a", "nan", "--point", "0,1,0"],
        vec!["compare", "--seed", "1"],
        vec!["frobnicate"],
    ] {
        let o = ctsteam(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).starts_with("error[validation]:"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[prior]\nqcdiag = [1, 1, 1, 1, 1, 1]\n").unwrap();
    let out = dir.path().join("out");
    let o = ctsteam(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("qcdiag"), "{}", stderr(&o));
}

#[test]
fn simulate_estimate_evaluate_pipeline() {
    let dir = tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let sim = dir.path().join("sim");
    let o = ctsteam(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(sim.join("ground_truth.csv").exists());
    let meas = sim.join("measurements.csv");

    let est = dir.path().join("est");
    let o = ctsteam(&[
        "estimate",
        "--config",
        &cfg,
        "--measurements",
        meas.to_str().unwrap(),
        "--order",
        "wnoj",
        "--out",
        est.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["wnoj_trajectory.csv", "wnoj_summary.json", "wnoj_segments.csv"] {
        assert!(est.join(f).exists(), "{f}");
    }

    let seg = dir.path().join("eval/segments.csv");
    let o = ctsteam(&[
        "evaluate",
        "--config",
        &cfg,
        "--estimate",
        est.join("wnoj_trajectory.csv").to_str().unwrap(),
        "--ground-truth",
        sim.join("ground_truth.csv").to_str().unwrap(),
        "--out",
        seg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&seg).unwrap();
    let overall: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("overall,"))
        .and_then(|r| r.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(overall > 0.0 && overall < 1.0, "{overall}");
}

#[test]
fn compare_is_deterministic() {
    let dir = tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = ctsteam(&["compare", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("overall"));
        let mut files: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_owned()).collect();
        let bytes: Vec<_> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        outputs.push((names, bytes, stdout(&o)));
    }
    assert_eq!(outputs[0].0.len(), 6);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unconverged_solve_exits_with_solver_error() {
    let dir = tempdir().unwrap();
    let cfg = short_config(dir.path(), "[solver]\nmax_iterations = 1\ntolerance = 1e-15\n");
    let out = dir.path().join("out");
    let o = ctsteam(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[solver]:"));
    // artifacts are still written
    assert!(out.join("wnoa_summary.json").exists());
}
