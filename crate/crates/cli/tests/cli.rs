use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn voltune(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltune"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn transition_reports_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = voltune(dir.path(), &["transition", "--from", "1.0", "--to", "0.5"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("window_n = 5"));
    assert!(text.contains("band_percent = 1"));
    let t_s: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("settling_time_s = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((2.07e-3..=2.53e-3).contains(&t_s), "{t_s}");
    let csv = fs::read_to_string(dir.path().join("transition_1p000_0p500.csv")).unwrap();
    assert!(csv.starts_with("time_s,voltage_v\n0,1\n"));
}

#[test]
fn transition_outside_clamp_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = voltune(dir.path(), &["transition", "--from", "1.0", "--to", "0.2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("clamp"));
}

#[test]
fn intervals_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = voltune(dir.path(), &["intervals", "--samples", "10"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("intervals.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "path,scl_hz,mean_interval_s,model_interval_s");
    assert_eq!(rows.len(), 5);
    let f: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(&f[..2], ["hardware", "400000"]);
    let mean: f64 = f[2].parse().unwrap();
    assert!((mean - 200e-6).abs() < 1e-12, "{mean}");
}

#[test]
fn case_study_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = voltune(dir.path(), &["case-study"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn case_study_is_reproducible_and_feeds_savings() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = voltune(d.path(), &["--seed", "9", "case-study", "--speed", "10", "--mode", "both"]);
        assert!(o.status.success(), "{o:?}");
    }
    let csv = |d: &tempfile::TempDir| fs::read(d.path().join("case_study_10g_both.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let meta = fs::read_to_string(a.path().join("case_study_10g_both.toml")).unwrap();
    assert!(meta.contains("seed = 9"));
    assert!(meta.contains("point_expansion = \"minimal\""));

    let points = a.path().join("case_study_10g_both.csv");
    let o = voltune(a.path(), &["savings", points.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("voltage = 0.869"), "{text}");
    assert!(text.contains("voltage = 0.864"), "{text}");
}

#[test]
fn case_study_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "speed_gbps = 5.0\nmode = \"both\"\nstart_v = 0.8\nstop_v = 0.7\nstep_v = 0.01\nseed = 3\n",
    )
    .unwrap();
    let o = voltune(dir.path(), &["case-study", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let csv = fs::read_to_string(dir.path().join("case_study_5g_both.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);

    fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let o = voltune(dir.path(), &["case-study", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn replay_logs_and_fails_on_bad_lane() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("ok.txt");
    fs::write(&script, "0x4 9 0.9\n0x5 6\n").unwrap();
    let o = voltune(dir.path(), &["replay", script.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let status = fs::read_to_string(dir.path().join("replay_status.csv")).unwrap();
    assert_eq!(status.lines().count(), 3);
    let trace = fs::read_to_string(dir.path().join("replay_bus_trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "start_s,end_s,primitive,addr,cmd,payload_hex,status");
    assert_eq!(trace.lines().count(), 1 + 6 + 2);

    fs::write(&script, "0x5 42\n").unwrap();
    let o = voltune(dir.path(), &["replay", script.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn settle_reads_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "time_s,voltage_v\n0,1.0\n0.001,0.7\n0.002,0.5\n0.003,0.5\n0.004,0.5\n").unwrap();
    let o = voltune(dir.path(), &["settle", trace.to_str().unwrap(), "--window", "2"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("settling_time_s = 0.002000000"));
}
