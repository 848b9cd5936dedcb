use std::path::Path;
use std::process::{Command, Output};

fn flybat(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flybat"))
        .args(args)
        .env("FLYBAT_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn misspelled_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[vehicles]\nmain_mass = 0.8\nmasss = 1\n").unwrap();
    let out = flybat(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("masss") && err.contains("line 3"), "{err}");
}

#[test]
fn run_writes_into_the_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(&["run", "--scenario", "solo_hover", "--duration", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tel = std::fs::read_to_string(dir.path().join("solo_hover_telemetry.csv")).unwrap();
    assert!(tel.starts_with("# schema=1\ntime,"));
    assert_eq!(tel.lines().count(), 2 + 500);
    let summary = std::fs::read_to_string(dir.path().join("solo_hover_summary.csv")).unwrap();
    assert!(summary.contains("end_reason,wall_clock"), "{summary}");
}

#[test]
fn analyze_optimal_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let out = flybat(
        &["analyze", "--m0", "0.63", "--phi", "0.6666666666666666", "--curve", curve.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("battery_mass_kg    1.2600"), "{text}");
    assert!(text.contains("total_mass_kg      1.8900"), "{text}");
    let csv = std::fs::read_to_string(&curve).unwrap();
    let phi = column(&csv, "phi");
    let t = column(&csv, "normalized_time");
    let best = (0..t.len()).max_by(|a, b| t[*a].total_cmp(&t[*b])).unwrap();
    assert!((phi[best] - 2.0 / 3.0).abs() <= 0.002, "argmax at {}", phi[best]);
}

#[test]
fn analyze_rejects_fraction_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(&["analyze", "--phi", "1.2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_sweep_prints_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(&["sweep", "--scenario", "paper_demo", "--param", "seed", "--range", ""], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("seed,total_time_s"));
}

#[test]
fn contact_failures_never_extend_the_mission() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(
        &["sweep", "--scenario", "paper_demo", "--param", "contact_failure_probability", "--range", "0,0.5,1"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = column(&String::from_utf8(out.stdout).unwrap(), "total_time_s");
    assert_eq!(t.len(), 3);
    assert!(t[0] >= t[1] && t[1] >= t[2], "{t:?}");
}

#[test]
fn slower_turnaround_never_extends_the_mission() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(
        &["sweep", "--scenario", "paper_demo", "--param", "turnaround_delay", "--range", "0:600:3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = column(&String::from_utf8(out.stdout).unwrap(), "total_time_s");
    assert_eq!(t.len(), 3);
    assert!(t[0] >= t[1] && t[1] >= t[2], "{t:?}");
}

#[test]
fn sweep_of_unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = flybat(&["sweep", "--scenario", "paper_demo", "--param", "warp_factor", "--range", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
