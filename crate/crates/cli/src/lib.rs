//! `poolmap` subcommands, kept in a library so tests can drive them without
//! spawning processes.

pub mod svg;

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use poolmap_core::io::{
    load_map, load_scenario, load_trajectory, read_log, read_poses, save_map, save_pixmap, write_log, write_poses,
    IoError, RecordKind, SensorRecord,
};
use poolmap_core::mapper::{evaluate, LitterItem, LitterMap, MapScore, DEFAULT_DEDUP_RADIUS, DEFAULT_MATCH_GATE};
use poolmap_core::pipeline::{map_points, pose_rmse, replay, PipelineError, PoseRmse, ReplayOptions};
use poolmap_core::scenario::{Preset, Scenario};
use poolmap_core::simulator::{render_overhead, simulate_with, Trajectory};
use serde_json::json;
use thiserror::Error;

pub const LOG_LEVEL_ENV: &str = "POOLMAP_LOG_LEVEL";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Evaluation(_) => 1,
            Self::Input(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "poolmap", version, about = "Simulate, replay and score ROV pool-mapping runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scripted trajectory and write the sensor log plus truth sidecars.
    Simulate(SimulateArgs),
    /// Run the filter and mapper over a sensor log.
    Replay(ReplayArgs),
    /// Score estimates and a map against ground truth.
    Evaluate(EvaluateArgs),
    /// Draw the estimated track and litter map as SVG.
    RenderMap(RenderMapArgs),
    /// Start the live teleoperation server.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON; unspecified fields fall back to the preset defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario used when no file is given.
    #[arg(long, value_parser = parse_preset, conflicts_with = "scenario")]
    pub preset: Option<Preset>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "pool" => Ok(Preset::Pool),
        "tank" => Ok(Preset::Tank),
        _ => Err(format!("unknown preset `{s}` (expected pool or tank)")),
    }
}

impl ScenarioArgs {
    pub fn load(&self) -> Result<Scenario, CliError> {
        match (&self.scenario, self.preset) {
            (Some(path), _) => Ok(load_scenario(path)?),
            (None, p) => Ok(Scenario::from_preset(p.unwrap_or_default())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Trajectory JSON; defaults to the preset's built-in run.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Sensor log to write (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Render overhead frames into this directory and log planar fixes as
    /// frame references instead of coordinates.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Sensor log to replay (JSON Lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Pose estimates to write (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Litter map CSV to write.
    #[arg(long)]
    pub map: PathBuf,
    /// Optional JSON summary of the run.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Pose estimates written by `replay`.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Ground-truth trajectory sidecar written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Litter map CSV written by `replay`.
    #[arg(long, requires = "litter_truth")]
    pub map: Option<PathBuf>,
    /// Ground-truth litter CSV (same layout as the map export).
    #[arg(long, requires = "map")]
    pub litter_truth: Option<PathBuf>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Largest estimate/truth time offset that still pairs samples.
    #[arg(long, default_value_t = 0.1)]
    pub max_dt: f64,
    /// Matching gate for map items.
    #[arg(long, default_value_t = DEFAULT_MATCH_GATE)]
    pub gate: f64,
    /// Fail (exit 1) if pose RMSE X or Y exceeds this.
    #[arg(long)]
    pub max_rmse_xy: Option<f64>,
    /// Fail (exit 1) if pose RMSE Z exceeds this.
    #[arg(long)]
    pub max_rmse_z: Option<f64>,
    /// Fail (exit 1) if map RMSE X or Y exceeds this.
    #[arg(long)]
    pub max_map_rmse: Option<f64>,
    /// Fail (exit 1) on any missed or spurious map item.
    #[arg(long)]
    pub require_complete_map: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RenderMapArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Pose estimates written by `replay`.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Litter map CSV to draw.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Ground-truth trajectory to draw under the estimate.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Ground-truth litter CSV to draw.
    #[arg(long)]
    pub litter_truth: Option<PathBuf>,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// TCP port for HTTP and WebSocket clients.
    #[arg(long, default_value_t = poolmap_teleop::DEFAULT_PORT)]
    pub port: u16,
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// Directory holding the built browser UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Replay(a) => cmd_replay(&a).map(|_| ()),
        Command::Evaluate(a) => match cmd_evaluate(&a) {
            Ok(e) => {
                println!("{}", pretty(&e.report));
                Ok(())
            }
            Err((e, Some(report))) => {
                println!("{}", pretty(&report));
                Err(e)
            }
            Err((e, None)) => Err(e),
        },
        Command::RenderMap(a) => cmd_render_map(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

/// `run.jsonl` + `truth.jsonl` → `run.truth.jsonl`.
pub fn sidecar_path(log: &Path, suffix: &str) -> PathBuf {
    let name = log.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".jsonl").unwrap_or(&name);
    log.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn litter_truth_map(scenario: &Scenario) -> LitterMap<f64> {
    let items = scenario
        .litter
        .iter()
        .zip(scenario.litter_points())
        .map(|(spec, position)| LitterItem {
            position,
            label: spec.label,
            first_seen: 0.0,
            observations: 1,
        })
        .collect();
    LitterMap::from_items(items, 0.0)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut scenario = a.scenario.load()?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let trajectory = match &a.trajectory {
        Some(path) => load_trajectory(path)?,
        None => match scenario.preset {
            Preset::Tank => Trajectory::tank_square(&scenario),
            Preset::Pool => Trajectory::pool_survey(),
        },
    };
    ensure_parent(&a.out)?;

    let log_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut frame_error = None;
    let log = match &a.frames {
        None => simulate_with(&scenario, &trajectory, |_| {}),
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
            let mut index = 0u64;
            simulate_with(&scenario, &trajectory, |tick| {
                if frame_error.is_some() || !tick.records.iter().any(|r| r.kind == RecordKind::PlanarFix) {
                    return;
                }
                let path = dir.join(format!("overhead_{index:06}.ppm"));
                index += 1;
                if let Err(e) = save_pixmap(&path, &render_overhead(&tick.truth, &scenario)) {
                    frame_error = Some(e);
                    return;
                }
                let reference = path.strip_prefix(&log_dir).unwrap_or(&path).to_string_lossy().into_owned();
                for r in tick.records.iter_mut().filter(|r| r.kind == RecordKind::PlanarFix) {
                    *r = SensorRecord {
                        t: r.t,
                        kind: RecordKind::PlanarFix,
                        data: Vec::new(),
                        frame: Some(reference.clone()),
                    };
                }
            })
        }
    };
    if let Some(e) = frame_error {
        return Err(e.into());
    }

    write_log(&a.out, &log.records)?;
    let truth_path = sidecar_path(&a.out, "truth.jsonl");
    write_poses(&truth_path, &log.truth)?;
    let litter_path = sidecar_path(&a.out, "litter.csv");
    save_map(&litter_path, &litter_truth_map(&scenario))?;
    info!(
        "wrote {} records to {}, truth to {}, litter to {}",
        log.records.len(),
        a.out.display(),
        truth_path.display(),
        litter_path.display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub estimates: usize,
    pub map_items: usize,
    pub skipped_updates: usize,
    pub skipped_detections: usize,
    pub warnings: Vec<String>,
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<ReplaySummary, CliError> {
    let scenario = a.scenario.load()?;
    let records = read_log(&a.log)?;
    let options = ReplayOptions {
        frame_dir: a.log.parent().map(Path::to_path_buf),
    };
    let out = replay(&scenario, &records, options)?;
    let fixes = records.iter().filter(|r| r.kind == RecordKind::PlanarFix).count();
    let mut warnings = out.warnings.clone();
    if fixes == 0 {
        let msg = "log has no planar fixes; map placed with a dead-reckoned pose".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    ensure_parent(&a.out)?;
    ensure_parent(&a.map)?;
    write_poses(&a.out, &out.estimates)?;
    save_map(&a.map, &out.map)?;
    let summary = ReplaySummary {
        estimates: out.estimates.len(),
        map_items: out.map.len(),
        skipped_updates: out.skipped_updates,
        skipped_detections: out.skipped_detections,
        warnings,
    };
    if let Some(path) = &a.report {
        let report = json!({
            "estimates": summary.estimates,
            "map_items": summary.map_items,
            "skipped_updates": summary.skipped_updates,
            "skipped_detections": summary.skipped_detections,
            "warnings": summary.warnings,
        });
        write_json(path, &report)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pose: PoseRmse,
    pub map: Option<MapScore<f64>>,
    pub report: serde_json::Value,
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json values serialize")
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    ensure_parent(path)?;
    let text = pretty(value) + "\n";
    fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// On failure the report (when one was produced) comes back with the error.
pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Evaluation, (CliError, Option<serde_json::Value>)> {
    let input = |e: IoError| (CliError::from(e), None);
    let estimates = read_poses(&a.estimates).map_err(input)?;
    let truth = read_poses(&a.truth).map_err(input)?;
    let pose = pose_rmse(&estimates, &truth, a.max_dt).map_err(|e| (CliError::Evaluation(e.to_string()), None))?;

    let map = match (&a.map, &a.litter_truth) {
        (Some(map), Some(litter)) => {
            let map = load_map(map, DEFAULT_DEDUP_RADIUS).map_err(input)?;
            let litter = load_map(litter, 0.0).map_err(input)?;
            Some(evaluate(&map_points(&map), &map_points(&litter), a.gate))
        }
        _ => None,
    };

    let mut failures = Vec::new();
    let mut check = |name: &str, value: f64, limit: Option<f64>| {
        if let Some(limit) = limit {
            if value > limit {
                failures.push(format!("{name} = {value:.4} exceeds {limit}"));
            }
        }
    };
    check("pose RMSE X", pose.x, a.max_rmse_xy);
    check("pose RMSE Y", pose.y, a.max_rmse_xy);
    check("pose RMSE Z", pose.z, a.max_rmse_z);
    let map_score = match map {
        Some(Ok(score)) => {
            check("map RMSE X", score.rmse_x, a.max_map_rmse);
            check("map RMSE Y", score.rmse_y, a.max_map_rmse);
            if a.require_complete_map && (score.misses > 0 || score.spurious > 0) {
                failures.push(format!("map has {} misses and {} spurious items", score.misses, score.spurious));
            }
            Some(score)
        }
        Some(Err(e)) => {
            failures.push(e.to_string());
            None
        }
        None => None,
    };

    let report = json!({
        "pose": {
            "rmse_x_m": pose.x,
            "rmse_y_m": pose.y,
            "rmse_z_m": pose.z,
            "samples": pose.samples,
        },
        "map": map_score.as_ref().map(|s| json!({
            "rmse_x_m": s.rmse_x,
            "rmse_y_m": s.rmse_y,
            "matches": s.matches.len(),
            "misses": s.misses,
            "spurious": s.spurious,
        })),
        "failures": failures,
        "pass": failures.is_empty(),
    });
    if let Some(path) = &a.report {
        write_json(path, &report).map_err(|e| (e, None))?;
    }
    if !failures.is_empty() {
        return Err((CliError::Evaluation(failures.join("; ")), Some(report)));
    }
    Ok(Evaluation {
        pose,
        map: map_score,
        report,
    })
}

pub fn cmd_render_map(a: &RenderMapArgs) -> Result<(), CliError> {
    let scenario = a.scenario.load()?;
    let estimates = read_poses(&a.estimates)?;
    let truth = a.truth.as_deref().map(read_poses).transpose()?;
    let map = a.map.as_deref().map(|p| load_map(p, DEFAULT_DEDUP_RADIUS)).transpose()?;
    let litter = a.litter_truth.as_deref().map(|p| load_map(p, 0.0)).transpose()?;
    let doc = svg::render(&svg::Plot {
        pool_length_m: scenario.pool_length_m,
        pool_width_m: scenario.pool_width_m,
        estimates: &estimates,
        truth: truth.as_deref(),
        map: map.as_ref(),
        litter_truth: litter.as_ref(),
    });
    ensure_parent(&a.out)?;
    fs::write(&a.out, doc).map_err(|e| CliError::Input(format!("cannot write {}: {e}", a.out.display())))
}

pub fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let scenario = a.scenario.load()?;
    let addr = SocketAddr::new(a.bind, a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Input(e.to_string()))?;
    runtime
        .block_on(poolmap_teleop::serve(scenario, addr, a.static_dir.clone()))
        .map_err(|e| CliError::Input(e.to_string()))
}
