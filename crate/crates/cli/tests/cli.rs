use std::fs;
use std::path::Path;
use std::process::Command;

use varexp_cli::{run, CliError};

fn args(dir: &Path, rest: &[&str]) -> Vec<String> {
    let mut v = vec!["varexp".to_owned()];
    v.push(rest[0].to_owned());
    v.push("--out".into());
    v.push(dir.display().to_string());
    v.extend(rest[1..].iter().map(|s| s.to_string()));
    v
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn norm_of_x_in_l2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(dir.path(), &["norm", "--f", "x", "--p", "2", "--domain", "0,1"])).unwrap();
    assert!(out.passed);
    let v: f64 = rows(&out.csv)[0][0].parse().unwrap();
    assert!((v - 3f64.sqrt().recip()).abs() < 1e-9);
    let summary = fs::read_to_string(&out.summary).unwrap();
    assert!(summary.contains("luxemburg_norm = 5.77350269"));
}

#[test]
fn ap_scan_accepts_multiples_of_two_pi() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(
        dir.path(),
        &["ap-scan", "--f", "sin(x)", "--p", "2", "--eps", "0.1"],
    ))
    .unwrap();
    assert_eq!(out.exit_code(), 0);
    let accepted: Vec<f64> = rows(&out.csv)
        .iter()
        .filter(|r| r[1] == "1")
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert!(!accepted.is_empty());
    for tau in accepted {
        let k = (tau / (2.0 * std::f64::consts::PI)).round();
        assert!((tau - 2.0 * std::f64::consts::PI * k).abs() < 0.2, "τ = {tau}");
    }
    assert!(fs::read_to_string(&out.summary)
        .unwrap()
        .contains("verdict = AP-consistent"));
}

#[test]
fn counterexample_grows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(
        dir.path(),
        &["counterexample", "--lambda", "0.5", "--deltas", "1e-3,1e-4,1e-5"],
    ))
    .unwrap();
    assert!(out.passed);
    let r = rows(&out.csv);
    let values: Vec<f64> = r.iter().map(|x| x[1].parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] >= 2.0 * w[0]));

    let demanding = run(args(
        dir.path(),
        &["counterexample", "--min-ratio", "10", "--name", "strict"],
    ))
    .unwrap();
    assert_eq!(demanding.exit_code(), 1);
}

#[test]
fn specfun_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(
        dir.path(),
        &[
            "specfun",
            "--function",
            "ml",
            "--alpha",
            "2",
            "--x-range",
            "-1,0",
            "--points",
            "2",
        ],
    ))
    .unwrap();
    let r = rows(&out.csv);
    let v: f64 = r[0][1].parse().unwrap();
    assert!((v - 1f64.cos()).abs() < 1e-10);
    let out = run(args(
        dir.path(),
        &["specfun", "--function", "wright", "--x-range", "0,10", "--points", "11"],
    ))
    .unwrap();
    for row in rows(&out.csv) {
        let (x, v): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let exact = (-x * x / 4.0).exp() / std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 1e-8 * exact.max(1e-300) + 1e-11);
    }
}

#[test]
fn operator_reports() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("a.csv");
    fs::write(&matrix, "# stable\n-1, 0.5\n0, -2\n").unwrap();
    let out = run(args(
        dir.path(),
        &[
            "operator",
            "--matrix",
            matrix.to_str().unwrap(),
            "--gamma",
            "0.5",
            "--t-range",
            "10,1000",
            "--points",
            "5",
        ],
    ))
    .unwrap();
    assert!(out.passed);
    let s = fs::read_to_string(&out.summary).unwrap();
    assert!(s.contains("condition_p = holds"));
    assert!(s.contains("decay_S_slope"));
    let unstable = run(args(dir.path(), &["operator", "--matrix", "inline:1", "--name", "bad"])).unwrap();
    assert_eq!(unstable.exit_code(), 1);
    assert!(fs::read_to_string(&unstable.summary)
        .unwrap()
        .contains("condition_p = fails"));
}

#[test]
fn convolve_with_transfer_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(
        dir.path(),
        &[
            "convolve",
            "--g",
            "sin(x)",
            "--t-range",
            "0,20",
            "--points",
            "21",
            "--eps",
            "0.1",
        ],
    ))
    .unwrap();
    assert!(out.passed);
    for r in rows(&out.csv) {
        let (t, g): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((g - (t.sin() - t.cos()) / 2.0).abs() < 1e-7);
    }
    let s = fs::read_to_string(&out.summary).unwrap();
    assert!(s.contains("transfer_violations = 0"));

    let finite = run(args(
        dir.path(),
        &[
            "convolve",
            "--mode",
            "finite",
            "--g",
            "1",
            "--t-range",
            "0,1",
            "--points",
            "2",
            "--name",
            "h",
        ],
    ))
    .unwrap();
    let r = rows(&finite.csv);
    let h: f64 = r[1][1].parse().unwrap();
    assert!((h - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
}

#[test]
fn solve_dfp_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(args(
        dir.path(),
        &[
            "solve-dfp",
            "--matrix",
            "inline:-1",
            "--gamma",
            "1",
            "--x0",
            "1",
            "--t-max",
            "2",
            "--points",
            "200",
        ],
    ))
    .unwrap();
    assert!(out.passed);
    for r in rows(&out.csv) {
        let (t, u): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((u - (-t).exp()).abs() < 1e-8);
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "name = from-config\n[norm]\nf = x\np = 2\ndomain = 0,1\n[ap-scan]\neps = 0.3\n",
    )
    .unwrap();
    let base = ["norm", "--config", cfg.to_str().unwrap()];
    let out = run(args(dir.path(), &base)).unwrap();
    assert!(out.csv.ends_with("from-config.csv"));
    let v: f64 = rows(&out.csv)[0][0].parse().unwrap();
    assert!((v - 3f64.sqrt().recip()).abs() < 1e-9);

    let mut flagged = base.to_vec();
    flagged.extend(["--p", "1", "--name", "flagged"]);
    let out = run(args(dir.path(), &flagged)).unwrap();
    let v: f64 = rows(&out.csv)[0][0].parse().unwrap();
    assert!((v - 0.5).abs() < 1e-9);

    fs::write(&cfg, "[norm]\nf = x\nwindw = 2\n").unwrap();
    assert!(matches!(run(args(dir.path(), &base)), Err(CliError::Usage(_))));
    fs::write(&cfg, "f = x\n").unwrap();
    assert!(matches!(run(args(dir.path(), &base)), Err(CliError::Usage(_))));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        vec!["norm", "--p", "2"],
        vec!["norm", "--f", "x", "--domain", "1,0"],
        vec!["norm", "--f", "x(", "--p", "2"],
        vec!["ap-scan", "--f", "sin(x)", "--eps", "-1"],
        vec!["counterexample", "--lambda", "0.9"],
        vec!["counterexample", "--deltas", "1e-4,1e-3"],
        vec!["specfun", "--function", "bessel"],
        vec!["solve-dfp", "--matrix", "inline:-1", "--gamma", "0.5", "--x0", "1,2"],
        vec!["solve-dfp", "--matrix", "inline:-1", "--gamma", "1.5", "--x0", "1"],
        vec!["operator", "--matrix", "inline:-1", "--c", "0.5"],
        vec!["operator", "--matrix", "/nonexistent/matrix.csv"],
        vec!["norm", "--f", "x", "--bogus", "1"],
    ] {
        let e = run(args(dir.path(), &bad)).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{bad:?}: {e}");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_varexp");
    let status = |a: &[&str]| {
        Command::new(bin)
            .args(a)
            .current_dir(dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(status(&["norm", "--f", "1", "--p", "3"]), Some(0));
    assert_eq!(status(&["operator", "--matrix", "inline:2"]), Some(1));
    assert_eq!(status(&["norm"]), Some(2));
    assert_eq!(status(&["frobnicate"]), Some(2));
    assert_eq!(status(&["--help"]), Some(0));
    assert!(dir.path().join("norm.csv").exists());
}

#[test]
fn identical_configs_give_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for sub in [
        vec![
            "ap-scan",
            "--f",
            "sin(x) + sin(sqrt(2)*x)",
            "--p",
            "1 - ln(x)",
            "--eps",
            "0.2",
            "--t-range",
            "0,5",
        ],
        vec!["convolve", "--g", "sign(sin(x))", "--points", "11"],
    ] {
        let x = run(args(a.path(), &sub)).unwrap();
        let y = run(args(b.path(), &sub)).unwrap();
        assert_eq!(fs::read(&x.csv).unwrap(), fs::read(&y.csv).unwrap());
        assert_eq!(fs::read(&x.summary).unwrap(), fs::read(&y.summary).unwrap());
    }
}
