use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poolmap_core::io::{read_poses, write_poses, PoseRecord};

fn poolmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn poolmap_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolmap"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn simulate(dir: &Path, scenario: &Path, name: &str) -> PathBuf {
    let log = dir.join(name);
    let o = poolmap(&["simulate", "--scenario", s(scenario), "--out", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    log
}

#[test]
fn missing_trajectory_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/traj.json");
    let o = poolmap(&["simulate", "--preset", "tank", "--trajectory", s(&missing), "--out", s(&dir.path().join("a.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/traj.json"), "{}", stderr(&o));
}

#[test]
fn bad_flag_exits_2() {
    let o = poolmap(&["simulate", "--warp-speed"]);
    assert_eq!(o.status.code(), Some(2));
    let o = poolmap(&["simulate", "--preset", "ocean", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_scenario_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "bad.json", r#"{"water_depth_m": -1}"#);
    let o = poolmap(&["simulate", "--scenario", s(&sc), "--out", s(&dir.path().join("a.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("water_depth_m"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_sidecars_and_scripted_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "tank.json", r#"{"preset":"tank","seed":3}"#);
    let traj = write(
        dir.path(),
        "traj.json",
        r#"{"duration_s": 6.0, "commands": [{"t_s": 0.0, "surge_m_s": 0.1}, {"t_s": 3.0}]}"#,
    );
    let log = dir.path().join("run.jsonl");
    let o = poolmap(&["simulate", "--scenario", s(&sc), "--trajectory", s(&traj), "--out", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = read_poses(&dir.path().join("run.truth.jsonl")).unwrap();
    assert_eq!(truth.len(), 121);
    let moved = truth.last().unwrap().state[0];
    // 0.1 m/s for 3 s through a 0.5 s lag, then coasting down: 0.3 m net
    assert!((moved - 0.3).abs() < 1e-3, "{moved}");
    assert!(dir.path().join("run.litter.csv").exists());
}

#[test]
fn zero_noise_replay_ends_on_truth() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "clean.json",
        r#"{"preset":"tank","orientation_sigma_rad":[0,0,0],"ang_rate_sigma_rad_s":0,"accel_sigma_m_s2":0,
            "depth_sigma_m":0,"overhead_pixel_sigma_px":0,"detection_pixel_sigma_px":0,"miss_rate":0}"#,
    );
    let log = simulate(dir.path(), &sc, "clean.jsonl");
    let est = dir.path().join("est.jsonl");
    let o = poolmap(&["replay", "--scenario", s(&sc), "--log", s(&log), "--out", s(&est), "--map", s(&dir.path().join("m.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let est = read_poses(&est).unwrap();
    let truth = read_poses(&dir.path().join("clean.truth.jsonl")).unwrap();
    let (e, t) = (est.last().unwrap(), truth.last().unwrap());
    let err = ((e.state[0] - t.state[0]).powi(2) + (e.state[1] - t.state[1]).powi(2) + (e.state[2] - t.state[2]).powi(2)).sqrt();
    assert!(err < 1e-3, "terminal error {err}");
    assert_eq!(e.cov_diag.as_ref().unwrap().len(), 15);
}

#[test]
fn corrupt_log_line_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let log = write(
        dir.path(),
        "bad.jsonl",
        "{\"t\":0.0,\"kind\":\"depth\",\"data\":[-0.3]}\n{\"t\":0.1,\"kind\":\"depth\",\"data\":[\n",
    );
    let o = poolmap(&["replay", "--preset", "tank", "--log", s(&log), "--out", s(&dir.path().join("e.jsonl")), "--map", s(&dir.path().join("m.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn detections_without_fixes_still_map_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "pool.json", r#"{"seed":4}"#);
    let log = simulate(dir.path(), &sc, "pool.jsonl");
    let stripped: String = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"planar_fix\""))
        .map(|l| format!("{l}\n"))
        .collect();
    let only = write(dir.path(), "nofix.jsonl", &stripped);
    let map = dir.path().join("m.csv");
    let report = dir.path().join("r.json");
    let o = poolmap(&[
        "replay", "--scenario", s(&sc), "--log", s(&only), "--out", s(&dir.path().join("e.jsonl")), "--map", s(&map),
        "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("dead-reckoned"), "{}", stderr(&o));
    let rows = fs::read_to_string(&map).unwrap().lines().count();
    assert!(rows > 1, "map has no items");
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!r["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn log_level_env_controls_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.jsonl");
    let quiet = poolmap_env(&["simulate", "--preset", "tank", "--out", s(&out)], "POOLMAP_LOG_LEVEL", "error");
    assert!(stderr(&quiet).is_empty(), "{}", stderr(&quiet));
    let chatty = poolmap_env(&["simulate", "--preset", "tank", "--out", s(&out)], "POOLMAP_LOG_LEVEL", "info");
    assert!(stderr(&chatty).contains("wrote"), "{}", stderr(&chatty));
}

fn poses(offset_x: f64, t0: f64) -> Vec<PoseRecord> {
    (0..50)
        .map(|i| {
            let mut state = vec![0.0; 15];
            state[0] = 0.01 * i as f64 + offset_x;
            state[1] = -0.02 * i as f64;
            state[2] = -0.3;
            PoseRecord {
                t: t0 + 0.05 * i as f64,
                state,
                cov_diag: None,
            }
        })
        .collect()
}

fn report_of(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn evaluate_identical_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.jsonl");
    write_poses(&truth, &poses(0.0, 0.0)).unwrap();
    let same = dir.path().join("same.jsonl");
    write_poses(&same, &poses(0.0, 0.0)).unwrap();
    let shifted = dir.path().join("shifted.jsonl");
    write_poses(&shifted, &poses(0.1, 0.0)).unwrap();

    let o = poolmap(&["evaluate", "--estimates", s(&same), "--truth", s(&truth)]);
    assert!(o.status.success());
    let r = report_of(&o);
    assert_eq!(r["pose"]["rmse_x_m"], 0.0);
    assert_eq!(r["pose"]["rmse_y_m"], 0.0);
    assert_eq!(r["pose"]["rmse_z_m"], 0.0);

    let report = dir.path().join("report.json");
    let o = poolmap(&["evaluate", "--estimates", s(&shifted), "--truth", s(&truth), "--report", s(&report)]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!((r["pose"]["rmse_x_m"].as_f64().unwrap() - 0.1).abs() < 1e-12);

    let o = poolmap(&["evaluate", "--estimates", s(&shifted), "--truth", s(&truth), "--max-rmse-xy", "0.05"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(report_of(&o)["pass"], false);
}

#[test]
fn evaluate_without_overlap_fails() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.jsonl");
    write_poses(&truth, &poses(0.0, 0.0)).unwrap();
    let late = dir.path().join("late.jsonl");
    write_poses(&late, &poses(0.0, 100.0)).unwrap();
    let o = poolmap(&["evaluate", "--estimates", s(&late), "--truth", s(&truth)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("share no timestamps"), "{}", stderr(&o));
}

#[test]
fn frames_mode_replays_through_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "tank.json", r#"{"preset":"tank","seed":9}"#);
    let traj = write(
        dir.path(),
        "traj.json",
        r#"{"duration_s": 8.0, "commands": [{"t_s": 0.0, "surge_m_s": 0.1, "sway_m_s": 0.05}, {"t_s": 4.0}]}"#,
    );
    let log = dir.path().join("run.jsonl");
    let frames = dir.path().join("frames");
    let o = poolmap(&[
        "simulate", "--scenario", s(&sc), "--trajectory", s(&traj), "--out", s(&log), "--frames", s(&frames),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&log).unwrap();
    assert!(text.contains(r#""frame":"frames/overhead_000000.ppm""#));
    assert_eq!(fs::read_dir(&frames).unwrap().count(), 81);

    let est = dir.path().join("est.jsonl");
    let o = poolmap(&["replay", "--scenario", s(&sc), "--log", s(&log), "--out", s(&est), "--map", s(&dir.path().join("m.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = poolmap(&[
        "evaluate", "--estimates", s(&est), "--truth", s(&dir.path().join("run.truth.jsonl")), "--max-rmse-xy", "0.06",
        // short run, so the transient from the zero initial depth dominates
        "--max-rmse-z", "0.05",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn full_pool_run_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "pool.json", "{}");
    let log = simulate(dir.path(), &sc, "pool.jsonl");
    let est = dir.path().join("est.jsonl");
    let map = dir.path().join("map.csv");
    let o = poolmap(&["replay", "--scenario", s(&sc), "--log", s(&log), "--out", s(&est), "--map", s(&map)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let litter = dir.path().join("pool.litter.csv");
    let o = poolmap(&[
        "evaluate", "--estimates", s(&est), "--truth", s(&dir.path().join("pool.truth.jsonl")), "--map", s(&map),
        "--litter-truth", s(&litter), "--max-map-rmse", "0.12", "--require-complete-map",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(report_of(&o)["map"]["misses"], 0);

    let svg = dir.path().join("plots/map.svg");
    let o = poolmap(&[
        "render-map", "--scenario", s(&sc), "--estimates", s(&est), "--map", s(&map), "--litter-truth", s(&litter),
        "--truth", s(&dir.path().join("pool.truth.jsonl")), "--out", s(&svg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = fs::read_to_string(&svg).unwrap();
    assert!(doc.starts_with("<svg"));
    assert_eq!(doc.matches(r#"class="litter""#).count(), 5);
    assert_eq!(doc.matches(r#"class="truth""#).count(), 5);
}

#[test]
fn serve_reports_bind_failure() {
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = poolmap(&["serve", "--preset", "tank", "--port", &port]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot bind"), "{}", stderr(&o));
}
