use std::process::Command;

fn dexp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dexp"))
}

#[test]
fn solve_writes_csv_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run.csv");
    let status = dexp()
        .args(["solve", "--problem", "bilinear", "--dim", "4", "--p", "2", "--iters", "200", "--seed", "3"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,lambda,residue,inf_residue,step_norm,lyapunov,cum_lambda,merit_ergodic"));
    assert!(lines.count() >= 1);
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("certificates=pass"), "{stdout}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "problem = affine\ndim = 3\niters = 50\nseed = 1\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, extra) in [(&a, vec![]), (&b, vec!["--iters", "20"])] {
        let status = dexp().arg("solve").arg("--config").arg(&cfg).args(extra).arg("--out").arg(out).output().unwrap().status;
        assert!(status.success());
    }
    let rows = |p: &std::path::Path| std::fs::read_to_string(p).unwrap().lines().count() - 1;
    assert_eq!(rows(&a), 50);
    assert_eq!(rows(&b), 20);
}

#[test]
fn rates_reports_slope_and_enforces_limit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("y.csv");
    let mut text = String::from("k,y\n");
    for k in 1..=200 {
        text.push_str(&format!("{k},{:e}\n", 3.0 / (k as f64).powi(2)));
    }
    std::fs::write(&csv, text).unwrap();
    let ok = dexp().args(["rates", "--column", "y", "--max-slope", "-1.9"]).arg("--csv").arg(&csv).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("slope -2.0000"));
    let fail = dexp().args(["rates", "--column", "y", "--max-slope", "-2.1"]).arg("--csv").arg(&csv).output().unwrap().status;
    assert_eq!(fail.code(), Some(1));
}

#[test]
fn bad_input_exits_with_code_two() {
    let status = dexp().args(["solve", "--problem", "nonexistent"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("nonexistent"));
    let odd = dexp().args(["solve", "--problem", "bilinear", "--dim", "3"]).output().unwrap().status;
    assert_eq!(odd.code(), Some(2));
}

#[test]
fn zoo_lists_every_problem() {
    let out = dexp().args(["zoo", "list"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["affine", "bilinear", "strongmono-affine", "cubic-grad", "scalar-cubed", "strongmono-cubic"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from {text}");
    }
}

#[test]
fn batch_writes_hash_named_files_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = dir.path().join("one.cfg");
    let c2 = dir.path().join("two.cfg");
    std::fs::write(&c1, "problem = affine\ndim = 3\niters = 30\nseed = 1\n").unwrap();
    std::fs::write(&c2, "problem = strongmono-cubic\nsolver = restart\ndim = 1\np = 2\nregion = 0.5\n").unwrap();
    let out_dir = dir.path().join("runs");
    // the duplicate config runs once
    let status = dexp().arg("batch").arg(&c1).arg(&c2).arg(&c1).arg("--out-dir").arg(&out_dir).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stdout));
    let index = std::fs::read_to_string(out_dir.join("index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let hash = line.split(',').next().unwrap();
        assert_eq!(hash.len(), 16);
        assert!(out_dir.join(format!("{hash}.csv")).exists());
    }
}
