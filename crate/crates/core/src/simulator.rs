//! Ground-truth ROV motion in a virtual pool, sensor synthesis, overhead
//! frame rendering and a geometric stand-in for the litter detector.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ekf::Pose15;
use crate::geometry::{inverse_project, project, EulerAngles, PixelCoord};
use crate::io::{PoseRecord, RecordKind, SensorRecord};
use crate::mapper::LitterClass;
use crate::scalar::wrap_angle;
use crate::scenario::{Scenario, ValidationError};
use crate::segmentation::RasterFrame;

pub const POOL_BLUE: [u8; 3] = [30, 95, 160];
pub const DECK_GRAY: [u8; 3] = [70, 70, 75];
pub const HULL_DARK: [u8; 3] = [40, 40, 45];
pub const LITTER_GRAY: [u8; 3] = [150, 150, 150];
pub const PATCH_YELLOW: [u8; 3] = [250, 210, 20];

/// Body-frame velocity setpoint held from `t` until the next command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityCommand {
    #[serde(rename = "t_s")]
    pub t: f64,
    pub surge_m_s: f64,
    pub sway_m_s: f64,
    pub heave_m_s: f64,
    pub yaw_rate_rad_s: f64,
}

impl VelocityCommand {
    pub fn new(t: f64, surge: f64, sway: f64, heave: f64, yaw_rate: f64) -> Self {
        Self {
            t,
            surge_m_s: surge,
            sway_m_s: sway,
            heave_m_s: heave,
            yaw_rate_rad_s: yaw_rate,
        }
    }

    pub fn clamped(mut self, max_speed: f64, max_yaw_rate: f64) -> Self {
        for v in [&mut self.surge_m_s, &mut self.sway_m_s, &mut self.heave_m_s] {
            *v = v.clamp(-max_speed, max_speed);
        }
        self.yaw_rate_rad_s = self.yaw_rate_rad_s.clamp(-max_yaw_rate, max_yaw_rate);
        self
    }

    pub fn same_setpoint(&self, other: &Self) -> bool {
        self.surge_m_s == other.surge_m_s
            && self.sway_m_s == other.sway_m_s
            && self.heave_m_s == other.heave_m_s
            && self.yaw_rate_rad_s == other.yaw_rate_rad_s
    }

    fn linear(&self) -> Vector3<f64> {
        Vector3::new(self.surge_m_s, self.sway_m_s, self.heave_m_s)
    }
}

/// Scripted pilot input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub duration_s: f64,
    pub commands: Vec<VelocityCommand>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let err = |field: &str, message: &str| ValidationError {
            field: field.into(),
            message: message.into(),
        };
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(err("duration_s", "must be positive"));
        }
        for (i, w) in self.commands.windows(2).enumerate() {
            if w[1].t < w[0].t {
                return Err(err(&format!("commands[{}].t_s", i + 1), "commands must be time ordered"));
            }
        }
        if self.commands.iter().any(|c| !(c.t >= 0.0 && c.t.is_finite())) {
            return Err(err("commands.t_s", "times must be finite and >= 0"));
        }
        Ok(())
    }

    /// Moves through `waypoints` (x, y, z) at constant yaw, one leg after another,
    /// pausing `settle_s` after each leg. Open-loop: with first-order velocity
    /// tracking the net displacement of each leg equals the commanded one.
    pub fn waypoints(start: [f64; 3], waypoints: &[[f64; 3]], speed: f64, settle_s: f64, yaw: f64) -> Self {
        let mut commands = Vec::new();
        let mut t = 0.0;
        let mut here = start;
        let (s, c) = yaw.sin_cos();
        for wp in waypoints {
            let d = [wp[0] - here[0], wp[1] - here[1], wp[2] - here[2]];
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if dist > 0.0 {
                let dur = dist / speed;
                let (vx, vy, vz) = (d[0] / dur, d[1] / dur, d[2] / dur);
                // world velocity to body frame for a level vehicle at `yaw`
                commands.push(VelocityCommand::new(t, c * vx + s * vy, -s * vx + c * vy, vz, 0.0));
                t += dur;
            }
            commands.push(VelocityCommand::new(t, 0.0, 0.0, 0.0, 0.0));
            t += settle_s;
            here = *wp;
        }
        Self {
            duration_s: t,
            commands,
        }
    }

    /// Tank run: from the center out to the four corner marks and back.
    pub fn tank_square(scenario: &Scenario) -> Self {
        let (hx, hy) = scenario.half_extent();
        let z = scenario.initial_position_m[2];
        let corners = [[hx, hy, z], [-hx, hy, z], [-hx, -hy, z], [hx, -hy, z], [hx, hy, z], [0.0, 0.0, z]];
        let start = scenario.initial_position_m;
        Self::waypoints(start, &corners, 0.1, 3.0, scenario.initial_yaw_rad)
    }

    /// Pool survey: turn around, cruise to the shallow end, turn back, run the
    /// length of the pool, then return to the middle. Ends at rest.
    pub fn pool_survey() -> Self {
        use std::f64::consts::PI;
        let (speed, yaw_rate) = (0.2, 0.3);
        let half_turn = PI / yaw_rate;
        let mut commands = Vec::new();
        let mut t = 0.0;
        let mut push = |dur: f64, surge: f64, r: f64| {
            commands.push(VelocityCommand::new(t, surge, 0.0, 0.0, r));
            t += dur;
        };
        for (leg_s, turn) in [(10.0, yaw_rate), (20.0, -yaw_rate), (10.0, yaw_rate)] {
            push(half_turn, 0.0, turn);
            push(3.0, 0.0, 0.0);
            push(leg_s, speed, 0.0);
            push(3.0, 0.0, 0.0);
        }
        Self {
            duration_s: t,
            commands,
        }
    }

    /// Setpoint in force at time `t`.
    pub fn command_at(&self, t: f64) -> VelocityCommand {
        self.commands
            .iter()
            .take_while(|c| c.t <= t)
            .last()
            .copied()
            .unwrap_or_default()
    }
}

/// Advances the truth state: first-order tracking of the commanded body
/// velocity and yaw rate with time constant `tau`, integrated exactly over `dt`,
/// then clamped to the water volume.
pub fn step_truth(state: &Pose15<f64>, cmd: &VelocityCommand, dt: f64, scenario: &Scenario) -> Pose15<f64> {
    let cmd = cmd.clamped(scenario.max_speed_m_s, scenario.max_yaw_rate_rad_s);
    let tau = scenario.actuator_tau_s;
    let decay = (-dt / tau).exp();
    let lag = tau * (1.0 - decay);

    let v0 = state.velocity();
    let target = cmd.linear();
    let v1 = target + (v0 - target) * decay;
    let displacement_body = target * dt + (v0 - target) * lag;

    let r0 = state.angular_rate().z;
    let r_target = cmd.yaw_rate_rad_s;
    let r1 = r_target + (r0 - r_target) * decay;
    let dyaw = r_target * dt + (r0 - r_target) * lag;

    let angles = state.orientation();
    let mid = EulerAngles::new(angles.roll, angles.pitch, angles.yaw + 0.5 * dyaw);
    let mut pos = state.position() + mid.to_rotation().rotate(&displacement_body);
    let (hx, hy) = scenario.half_extent();
    pos.x = pos.x.clamp(-hx, hx);
    pos.y = pos.y.clamp(-hy, hy);
    pos.z = pos.z.clamp(-scenario.water_depth_m, 0.0);

    let mut next = *state;
    next.set_position(&pos);
    next.set_orientation(&EulerAngles::new(angles.roll, angles.pitch, wrap_angle(angles.yaw + dyaw)));
    next.set_velocity(&v1);
    next.set_angular_rate(&Vector3::new(0.0, 0.0, r1));
    next.set_acceleration(&((target - v1) / tau));
    next
}

/// World position of the overhead marker patch center.
pub fn patch_center(truth: &Pose15<f64>, scenario: &Scenario) -> Point3<f64> {
    truth.position()
        + truth
            .orientation()
            .to_rotation()
            .rotate(&Vector3::new(0.0, 0.0, scenario.patch.height_m))
}

/// Which sensors produce a sample on a given tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DueSensors {
    pub orientation: bool,
    pub angular_rate: bool,
    pub depth: bool,
    pub overhead: bool,
    pub detection: bool,
    pub accel: bool,
}

impl DueSensors {
    pub fn all() -> Self {
        Self {
            orientation: true,
            angular_rate: true,
            depth: true,
            overhead: true,
            detection: true,
            accel: true,
        }
    }

    pub fn at_tick(tick: u64, scenario: &Scenario) -> Self {
        let r = &scenario.rates;
        let due = |hz: f64| {
            let period = (r.sim_hz / hz).round().max(1.0) as u64;
            tick.is_multiple_of(period)
        };
        Self {
            orientation: due(r.orientation_hz),
            angular_rate: due(r.angular_rate_hz),
            depth: due(r.depth_hz),
            overhead: due(r.overhead_hz),
            detection: due(r.detection_hz),
            accel: scenario.filter.fuse_accel && due(r.accel_hz),
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Overhead fix: project the patch, perturb in pixels, back-project onto the
/// patch plane. `None` when the patch is out of frame.
pub fn overhead_fix(truth: &Pose15<f64>, scenario: &Scenario, rng: &mut ChaCha8Rng) -> Option<[f64; 2]> {
    let noise = [gauss(rng), gauss(rng)];
    let cam = scenario.overhead_camera.model();
    let patch = patch_center(truth, scenario);
    let px = project(&cam, &patch).ok()?;
    if !scenario.overhead_camera.intrinsics.in_frame(px.x, px.y) {
        return None;
    }
    let sigma = scenario.overhead_pixel_sigma_px;
    let noisy = PixelCoord::new(px.x + sigma * noise[0], px.y + sigma * noise[1]);
    let p = inverse_project(&cam, &noisy, patch.z).ok()?;
    Some([p.x, p.y])
}

/// Noisy sensor samples for the due sensors, in a fixed order. Random draws
/// happen for every due sensor regardless of its noise level.
pub fn sense(
    t: f64,
    truth: &Pose15<f64>,
    scenario: &Scenario,
    due: DueSensors,
    rng: &mut ChaCha8Rng,
) -> Vec<SensorRecord> {
    let mut out = Vec::new();
    if due.orientation {
        let a = truth.orientation();
        let s = scenario.orientation_sigma_rad;
        let data = [a.roll, a.pitch, a.yaw]
            .iter()
            .zip(s)
            .map(|(v, s)| wrap_angle(v + s * gauss(rng)))
            .collect();
        out.push(SensorRecord::new(t, RecordKind::Orientation, data));
    }
    if due.angular_rate {
        let s = scenario.ang_rate_sigma_rad_s;
        let data = truth.angular_rate().iter().map(|v| v + s * gauss(rng)).collect();
        out.push(SensorRecord::new(t, RecordKind::AngularRate, data));
    }
    if due.accel {
        let s = scenario.accel_sigma_m_s2;
        let data = truth.acceleration().iter().map(|v| v + s * gauss(rng)).collect();
        out.push(SensorRecord::new(t, RecordKind::Accel, data));
    }
    if due.depth {
        let z = truth.position().z + scenario.depth_sigma_m * gauss(rng);
        out.push(SensorRecord::new(t, RecordKind::Depth, vec![z]));
    }
    if due.overhead {
        if let Some(xy) = overhead_fix(truth, scenario, rng) {
            out.push(SensorRecord::new(t, RecordKind::PlanarFix, xy.to_vec()));
        }
    }
    if due.detection {
        for d in oracle_detect(t, truth, scenario, rng) {
            out.push(d.to_record());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub t: f64,
    pub center: PixelCoord<f64>,
    pub width_px: f64,
    pub height_px: f64,
    pub label: LitterClass,
    /// Index into the scenario litter list; only known to the simulator.
    pub source: Option<usize>,
}

impl DetectionEvent {
    pub fn to_record(&self) -> SensorRecord {
        SensorRecord::new(
            self.t,
            RecordKind::Detection,
            vec![
                self.center.x,
                self.center.y,
                self.width_px,
                self.height_px,
                self.label.index() as f64,
                self.source.map_or(-1.0, |s| s as f64),
            ],
        )
    }

    pub fn from_record(r: &SensorRecord) -> Option<Self> {
        if r.kind != RecordKind::Detection || r.data.len() != RecordKind::Detection.arity() {
            return None;
        }
        let d = &r.data;
        let label = LitterClass::from_index(d[4] as usize).filter(|_| d[4] >= 0.0 && d[4].fract() == 0.0)?;
        Some(Self {
            t: r.t,
            center: PixelCoord::new(d[0], d[1]),
            width_px: d[2],
            height_px: d[3],
            label,
            source: (d[5] >= 0.0).then_some(d[5] as usize),
        })
    }
}

/// Projects every visible litter item into the ROV camera. Items behind the
/// camera, off-frame or beyond range are skipped; others are dropped with
/// probability `miss_rate`.
pub fn oracle_detect(t: f64, truth: &Pose15<f64>, scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<DetectionEvent> {
    let cfg = &scenario.rov_camera;
    let cam = cfg.mount().camera(cfg.intrinsics.intrinsics(), truth);
    let sigma = scenario.detection_pixel_sigma_px;
    let [bx, by] = scenario.detection_bias_px;
    let mut out = Vec::new();
    for (i, (spec, p)) in scenario.litter.iter().zip(scenario.litter_points()).enumerate() {
        let miss = rng.random::<f64>() < scenario.miss_rate;
        let noise = [gauss(rng), gauss(rng)];
        if miss || (p - cam.position).norm() > scenario.max_detection_range_m {
            continue;
        }
        let Ok(px) = project(&cam, &p) else { continue };
        if !cfg.intrinsics.in_frame(px.x, px.y) {
            continue;
        }
        let center = PixelCoord::new(px.x + bx + sigma * noise[0], px.y + by + sigma * noise[1]);
        if !cfg.intrinsics.in_frame(center.x, center.y) {
            continue;
        }
        let depth = cam.to_camera_frame(&p).z;
        let size = scenario.litter_size_m;
        out.push(DetectionEvent {
            t,
            center,
            width_px: cfg.intrinsics.fx_px * size / depth,
            height_px: cfg.intrinsics.fy_px * size / depth,
            label: spec.label,
            source: Some(i),
        });
    }
    out
}

/// Horizontal rectangle (center, half sizes, yaw) at height `z`.
fn rect_corners(center: Point3<f64>, half: [f64; 2], yaw: f64) -> [Point3<f64>; 4] {
    let (s, c) = yaw.sin_cos();
    [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].map(|(a, b)| {
        let (dx, dy) = (a * half[0], b * half[1]);
        Point3::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy, center.z)
    })
}

/// Fills pixels whose centers fall inside the convex polygon.
fn fill_convex(frame: &mut RasterFrame, poly: &[PixelCoord<f64>], rgb: [u8; 3]) {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let min_x = poly.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = poly.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(w - 1.0);
    let min_y = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(h - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let n = poly.len();
    let orientation: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .signum();
    for y in min_y as usize..=max_y as usize {
        for x in min_x as usize..=max_x as usize {
            let (px, py) = (x as f64, y as f64);
            let inside = (0..n).all(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                orientation * ((b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)) >= 0.0
            });
            if inside {
                frame.set(x, y, rgb);
            }
        }
    }
}

fn draw_rect(frame: &mut RasterFrame, scenario: &Scenario, center: Point3<f64>, size: [f64; 2], yaw: f64, rgb: [u8; 3]) {
    let cam = scenario.overhead_camera.model();
    let corners = rect_corners(center, [size[0] / 2.0, size[1] / 2.0], yaw);
    let projected: Option<Vec<_>> = corners.iter().map(|c| project(&cam, c).ok()).collect();
    if let Some(poly) = projected {
        fill_convex(frame, &poly, rgb);
    }
}

/// Synthetic overhead frame: deck, pool water, litter, ROV hull and patch.
pub fn render_overhead(truth: &Pose15<f64>, scenario: &Scenario) -> RasterFrame {
    let cfg = &scenario.overhead_camera.intrinsics;
    let mut frame = RasterFrame::filled(cfg.width_px as usize, cfg.height_px as usize, DECK_GRAY)
        .expect("validated camera size");
    draw_rect(
        &mut frame,
        scenario,
        Point3::new(0.0, 0.0, 0.0),
        [scenario.pool_length_m, scenario.pool_width_m],
        0.0,
        POOL_BLUE,
    );
    let s = scenario.litter_size_m;
    for p in scenario.litter_points() {
        draw_rect(&mut frame, scenario, p, [s, s], 0.0, LITTER_GRAY);
    }
    let yaw = truth.orientation().yaw;
    let top = patch_center(truth, scenario);
    draw_rect(&mut frame, scenario, top, scenario.patch.hull_size_m, yaw, HULL_DARK);
    draw_rect(&mut frame, scenario, top, scenario.patch.size_m, yaw, PATCH_YELLOW);
    frame
}

/// Output of one simulation tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub t: f64,
    pub truth: Pose15<f64>,
    pub records: Vec<SensorRecord>,
}

/// Tick-driven simulation state machine.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    truth: Pose15<f64>,
    tick: u64,
    rng: ChaCha8Rng,
    command: VelocityCommand,
    logged_command: Option<VelocityCommand>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Self {
        let truth = Self::initial_truth(&scenario);
        let rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        Self {
            scenario,
            truth,
            tick: 0,
            rng,
            command: VelocityCommand::default(),
            logged_command: None,
        }
    }

    pub fn initial_truth(scenario: &Scenario) -> Pose15<f64> {
        let mut truth = Pose15::zero();
        let [x, y, z] = scenario.initial_position_m;
        truth.set_position(&Point3::new(x, y, z));
        truth.set_orientation(&EulerAngles::new(0.0, 0.0, scenario.initial_yaw_rad));
        truth
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn truth(&self) -> &Pose15<f64> {
        &self.truth
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.sim_dt()
    }

    pub fn command(&self) -> &VelocityCommand {
        &self.command
    }

    /// Setpoint used from the next step on.
    pub fn set_command(&mut self, cmd: VelocityCommand) {
        self.command = cmd.clamped(self.scenario.max_speed_m_s, self.scenario.max_yaw_rate_rad_s);
    }

    /// Senses at the current time, then advances truth by one tick.
    pub fn tick(&mut self) -> TickOutput {
        let t = self.time();
        let mut records = Vec::new();
        if self.logged_command.is_none_or(|c| !c.same_setpoint(&self.command)) {
            let c = self.command;
            records.push(SensorRecord::new(
                t,
                RecordKind::Command,
                vec![c.surge_m_s, c.sway_m_s, c.heave_m_s, c.yaw_rate_rad_s],
            ));
            self.logged_command = Some(c);
        }
        let due = DueSensors::at_tick(self.tick, &self.scenario);
        records.extend(sense(t, &self.truth, &self.scenario, due, &mut self.rng));
        let out = TickOutput {
            t,
            truth: self.truth,
            records,
        };
        self.truth = step_truth(&self.truth, &self.command, self.scenario.sim_dt(), &self.scenario);
        self.tick += 1;
        out
    }
}

/// Full sensor log plus the truth trajectory sampled on every tick.
#[derive(Debug, Clone, Default)]
pub struct SimulationLog {
    pub records: Vec<SensorRecord>,
    pub truth: Vec<PoseRecord>,
}

/// Runs a scripted trajectory from `t = 0` to `duration_s` inclusive.
pub fn simulate(scenario: &Scenario, trajectory: &Trajectory) -> SimulationLog {
    simulate_with(scenario, trajectory, |_| {})
}

/// As [`simulate`], letting `inspect` rewrite each tick's records before they
/// are logged.
pub fn simulate_with<F: FnMut(&mut TickOutput)>(scenario: &Scenario, trajectory: &Trajectory, mut inspect: F) -> SimulationLog {
    let mut sim = Simulation::new(scenario.clone());
    let ticks = (trajectory.duration_s * scenario.rates.sim_hz + 1e-9).floor() as u64;
    let mut log = SimulationLog::default();
    for _ in 0..=ticks {
        sim.set_command(trajectory.command_at(sim.time() + 1e-9));
        let mut out = sim.tick();
        inspect(&mut out);
        log.records.extend(out.records);
        log.truth.push(PoseRecord {
            t: out.t,
            state: out.truth.as_slice().to_vec(),
            cov_diag: None,
        });
    }
    log
}
