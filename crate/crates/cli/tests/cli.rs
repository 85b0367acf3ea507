use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wheelleg"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn wheelleg")
}

fn summary(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn value(pairs: &[(String, String)], key: &str) -> f64 {
    pairs.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("missing {key}")).1.parse().unwrap()
}

const SHORT_TROT: &str = r#"
name = "short_trot"
duration = 1.0
seed = 3

[gait]
kind = "trot"

[commands]
step = [[0.0, 0.4, 0.0]]
drive = [[0.0, 0.3]]

[noise]
sigma_accel = 0.05
sigma_joint_vel = 0.01
wheel_encoder_ppr = 84
"#;

#[test]
fn run_writes_logs_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("stand");
    let o = exec(bin().args(["run", "--check", "--out"]).arg(&out).arg(scenario("stand")));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out.join("summary.txt"));
    assert_eq!(s[0], ("schema".into(), "wheelleg-summary-v1".into()));
    assert!(value(&s, "height_rmse") < 1e-6);
    assert_eq!(value(&s, "steps"), 10001.0);
    let est = fs::read_to_string(out.join("estimate.csv")).unwrap();
    let mut lines = est.lines();
    assert_eq!(lines.next(), Some("#schema=wheelleg-estimate-v1"));
    assert_eq!(lines.next().unwrap().split(',').count(), 30);
    assert_eq!(lines.count(), 10001);
    for f in ["truth.csv", "sensors.csv"] {
        assert!(out.join(f).exists());
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("[PASS] height_rmse"), "{stdout}");
}

#[test]
fn decimation_thins_the_estimate_log_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let out = tmp.path().join("o");
    let o = exec(bin().args(["run", "--decimate", "10", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let rows = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count() - 2;
    assert_eq!(rows("estimate.csv"), 101);
    assert_eq!(rows("truth.csv"), 1001);
    let o = exec(bin().args(["run", "--decimate", "0", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(exec(bin().args(["run", "--out"]).arg(d).arg(&cfg)).status.code(), Some(0));
    }
    for f in ["truth.csv", "sensors.csv", "estimate.csv", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replay_reproduces_the_generated_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(exec(bin().args(["run", "--out"]).arg(&a).arg(&cfg)).status.code(), Some(0));
    let o = exec(bin().args(["run", "--out"]).arg(&b).arg("--replay").arg(&a).arg(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["truth.csv", "sensors.csv", "estimate.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn malformed_config_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "name = \"x\"\n[trust]\nwindow = \"wide\"\n");
    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    let cfg = write(tmp.path(), "unknown.toml", "[filter]\nmodle = \"baseline\"\n");
    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("modle"));

    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(tmp.path().join("missing.toml")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_pose_exits_3_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(scenario("unreachable")));
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("leg 0") && err.contains("t=0"), "{err}");
}

#[test]
fn violated_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SHORT_TROT}\n[check.max]\nvelocity_rmse = 1e-9\n");
    let cfg = write(tmp.path(), "strict.toml", &text);
    let o = exec(bin().args(["run", "--check", "--out"]).arg(tmp.path().join("o")).arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] velocity_rmse"));
    let s = summary(&tmp.path().join("o/summary.txt"));
    assert!(s.contains(&("check.velocity_rmse".into(), "fail".into())));
    // Without --check the same run succeeds.
    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(&cfg));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn unknown_check_metric_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[check.max]\nvelocity_rsme = 1.0\n");
    let o = exec(bin().args(["run", "--out"]).arg(tmp.path().join("o")).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_reports_both_runs_and_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = exec(bin().args(["compare", "--check", "--out"]).arg(&out).arg(scenario("drive_noisy")));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&out.join("summary.txt"));
    let p = value(&s, "primary.velocity_rmse_x");
    let r = value(&s, "reference.velocity_rmse_x");
    assert!(p < 0.05 && r > 0.5);
    assert!((value(&s, "ratio.velocity_rmse_x") - r / p).abs() < 1e-9 * r / p);
    assert!(s.contains(&("reference".into(), "baseline/full".into())));
    assert!(out.join("estimate_primary.csv").exists() && out.join("estimate_reference.csv").exists());
}

#[test]
fn compare_on_a_stand_sees_no_difference() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "duration = 2.0\n[compare]\ncontrast = \"mode\"\n";
    let cfg = write(tmp.path(), "s.toml", text);
    let out = tmp.path().join("c");
    assert_eq!(exec(bin().args(["compare", "--out"]).arg(&out).arg(&cfg)).status.code(), Some(0));
    let s = summary(&out.join("summary.txt"));
    for key in ["position_rmse", "velocity_rmse", "height_max_abs"] {
        let d = value(&s, &format!("primary.{key}")) - value(&s, &format!("reference.{key}"));
        assert!(d.abs() < 1e-9, "{key}");
    }
}

#[test]
fn compare_contrast_flag_overrides_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let out = tmp.path().join("c");
    let o = exec(bin().args(["compare", "--contrast", "trust", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&out.join("summary.txt"));
    assert!(s.contains(&("contrast".into(), "trust".into())));
    assert!(s.contains(&("reference".into(), "wheel-aware/off".into())));
}

fn sweep_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn sweep_over_window_is_ordered_and_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let out = tmp.path().join("sw");
    let o = exec(
        bin().args(["sweep", "--param", "trust.window", "--values", "0.05,0.1,0.2,0.4", "--out"]).arg(&out).arg(&cfg),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 5);
    assert_eq!(column(&rows, "value"), ["0.05", "0.1", "0.2", "0.4"]);
    assert_eq!(column(&rows, "window"), ["0.05", "0.1", "0.2", "0.4"]);
    let trust: Vec<f64> = column(&rows, "mid_stance_trust").iter().map(|v| v.parse().unwrap()).collect();
    assert!(trust.windows(2).all(|w| w[1] <= w[0]), "{trust:?}");
    assert!(trust[3] < trust[0]);
    for i in 0..4 {
        assert!(out.join(format!("{i:03}/summary.txt")).exists());
    }
}

#[test]
fn sweep_over_seed_keeps_config_echo_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let out = tmp.path().join("sw");
    let o = exec(bin().args(["sweep", "--param", "seed", "--values", "1,2,3", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(&out);
    assert_eq!(column(&rows, "seed"), ["1", "2", "3"]);
    for name in ["window", "k_plus", "kappa", "model", "gait", "duration"] {
        let c = column(&rows, name);
        assert!(c.iter().all(|v| *v == c[0]), "{name}");
    }
    let rmse = column(&rows, "velocity_rmse");
    assert!(rmse[0] != rmse[1] && rmse[1] != rmse[2]);
}

#[test]
fn sweep_rejects_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", SHORT_TROT);
    let out = tmp.path().join("sw");
    let empty = exec(bin().args(["sweep", "--param", "trust.window", "--values", "", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(empty.status.code(), Some(2));
    let unknown = exec(bin().args(["sweep", "--param", "trust.windw", "--values", "0.1", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(unknown.status.code(), Some(2));
    let invalid = exec(bin().args(["sweep", "--param", "trust.window", "--values", "0.1,-3", "--out"]).arg(&out).arg(&cfg));
    assert_eq!(invalid.status.code(), Some(2));
}
