use std::path::{Path, PathBuf};
use std::process::Command;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn workbench(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_workbench"))
        .args(args)
        .output()
        .expect("workbench runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run_to(cmd: &str, cfg: &str, dir: &Path, extra: &[&str]) -> Run {
    let c = config(cfg);
    let mut args = vec![cmd, "--config", c.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    workbench(&args)
}

/// Compares against `configs/golden/<stem>.<cmd>.{json,txt}`; `UPDATE_GOLDEN=1` rewrites them.
fn check_golden(cmd: &str, cfg: &str, expected_code: i32) {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_to(cmd, cfg, tmp.path(), &[]);
    assert_eq!(r.code, expected_code, "{cmd} {cfg}\n{}{}", r.stdout, r.stderr);
    let stem = cfg.trim_end_matches(".toml");
    let golden = root().join("configs/golden");
    for ext in ["json", "txt"] {
        let got = std::fs::read_to_string(tmp.path().join(format!("report.{ext}"))).unwrap();
        let path = golden.join(format!("{stem}.{cmd}.{ext}"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &got).unwrap();
        } else {
            let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
            assert!(got == want, "{} differs from the fresh report:\n{got}", path.display());
        }
    }
}

#[test]
fn verify_goldens() {
    for (cfg, code) in [
        ("identity.toml", 0),
        ("winding.toml", 0),
        ("z2_shift.toml", 0),
        ("z4_shift.toml", 0),
        ("z2_rank2.toml", 0),
        ("z4_first_order.toml", 0),
        ("dense_shift.toml", 0),
        ("not_elliptic.toml", 3),
    ] {
        check_golden("verify", cfg, code);
    }
}

#[test]
fn other_command_goldens() {
    check_golden("check-group", "dense_shift.toml", 0);
    check_golden("check-group", "z4_shift.toml", 0);
    check_golden("ellipticity", "not_elliptic.toml", 3);
    check_golden("ellipticity", "z2_rank2.toml", 0);
    check_golden("index", "z4_shift.toml", 0);
    check_golden("sweep", "winding.toml", 0);
}

#[test]
fn identity_verifies_zero_equals_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_to("verify", "identity.toml", tmp.path(), &[]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("agreement: true (cohomological 0 = analytic 0)"), "{}", r.stdout);
}

#[test]
fn non_elliptic_prints_no_index() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_to("verify", "not_elliptic.toml", tmp.path(), &[]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.contains("not elliptic"));
    assert!(!r.stdout.contains("cohomological index"));
    assert!(!r.stdout.contains("analytic index"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert!(json.get("index").is_none());
    assert_eq!(json["ellipticity"]["verdict"], "not-elliptic");
}

#[test]
fn reports_are_byte_identical_for_equal_seeds() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to("verify", "z2_shift.toml", a.path(), &["--seed", "7"]);
    run_to("verify", "z2_shift.toml", b.path(), &["--seed", "7"]);
    run_to("verify", "z2_shift.toml", c.path(), &["--seed", "8"]);
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn sweep_rows_have_identical_integers_and_shrinking_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_to("sweep", "winding.toml", tmp.path(), &[]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["64", "128", "256"]);
    for row in &rows {
        assert_eq!((row[1], row[2], row[7]), ("-1", "-1", "true"));
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["sweep"]["residuals_shrink"], true);
}

#[test]
fn invalid_configs_fail_with_documented_messages() {
    let dir = root().join("configs/invalid");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let expect = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# expect: "))
            .unwrap_or_else(|| panic!("{} has no expectation line", path.display()));
        let r = workbench(&["verify", "--config", path.to_str().unwrap()]);
        assert_eq!(r.code, 2, "{}", path.display());
        assert!(r.stderr.contains(expect), "{}: {}", path.display(), r.stderr);
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn command_defaults_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config("z2_shift.toml");
    let r = workbench(&["--config", c.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.starts_with("command: verify"));
    let r = workbench(&["--config", config("identity.toml").to_str().unwrap()]);
    assert_eq!(r.code, 2);
}

#[test]
fn missing_config_file_is_an_other_failure() {
    let r = workbench(&["verify", "--config", "/nonexistent/config.toml"]);
    assert_eq!(r.code, 1);
}
