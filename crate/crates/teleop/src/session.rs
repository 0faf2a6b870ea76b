//! The authoritative simulation + estimation state for one live session.

use std::collections::VecDeque;

use log::warn;
use poolmap_core::io::RecordKind;
use poolmap_core::pipeline::{Pipeline, ReplayOptions};
use poolmap_core::scenario::Scenario;
use poolmap_core::simulator::{DetectionEvent, Simulation, VelocityCommand};

use crate::protocol::{CommandEcho, DetectionMark, MapMark, Snapshot};

/// Longest estimated-track history carried in a snapshot.
pub const HISTORY_CAP: usize = 600;
/// Ticks between history samples.
pub const HISTORY_STRIDE: u64 = 5;
/// Detections older than this are dropped from snapshots.
pub const DETECTION_TTL_S: f64 = 0.5;

#[derive(Debug)]
pub struct Session {
    scenario: Scenario,
    sim: Simulation,
    pipeline: Pipeline,
    ticks: u64,
    history: VecDeque<[f64; 2]>,
    detections: Vec<DetectionEvent>,
}

impl Session {
    pub fn new(scenario: Scenario) -> Self {
        let sim = Simulation::new(scenario.clone());
        let pipeline = Pipeline::new(scenario.clone(), ReplayOptions::default());
        Self {
            scenario,
            sim,
            pipeline,
            ticks: 0,
            history: VecDeque::new(),
            detections: Vec::new(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn tick_period_s(&self) -> f64 {
        self.scenario.sim_dt()
    }

    /// Restarts simulation, filter and map from the scenario's initial state.
    pub fn reset(&mut self) {
        *self = Self::new(self.scenario.clone());
    }

    /// Takes effect on the next tick.
    pub fn set_command(&mut self, surge: f64, sway: f64, heave: f64, yaw_rate: f64) {
        let t = self.sim.time();
        self.sim.set_command(VelocityCommand::new(t, surge, sway, heave, yaw_rate));
    }

    pub fn tick(&mut self) {
        let out = self.sim.tick();
        for r in &out.records {
            if r.kind == RecordKind::Detection {
                self.detections.extend(DetectionEvent::from_record(r));
            }
            if let Err(e) = self.pipeline.push(r) {
                warn!("session record at t={} rejected: {e}", r.t);
            }
        }
        let now = out.t;
        self.detections.retain(|d| now - d.t <= DETECTION_TTL_S);
        if self.ticks.is_multiple_of(HISTORY_STRIDE) {
            let p = self.pipeline.ekf().state().position();
            if self.history.len() == HISTORY_CAP {
                self.history.pop_front();
            }
            self.history.push_back([p.x, p.y]);
        }
        self.ticks += 1;
    }

    /// Snapshot of the state after the most recent tick. Truth is always
    /// included; clients that hide it get [`Snapshot::without_truth`].
    pub fn snapshot(&self) -> Snapshot {
        let ekf = self.pipeline.ekf();
        let c = self.sim.command();
        Snapshot {
            t: self.sim.time(),
            truth: Some(self.sim.truth().as_slice().to_vec()),
            estimate: ekf.state().as_slice().to_vec(),
            cov_diag: ekf.covariance().diagonal().as_slice().to_vec(),
            history: self.history.iter().copied().collect(),
            map: self
                .pipeline
                .map()
                .items()
                .iter()
                .map(|i| MapMark {
                    x: i.position.x,
                    y: i.position.y,
                    label: i.label,
                    observations: i.observations,
                })
                .collect(),
            detections: self
                .detections
                .iter()
                .map(|d| DetectionMark {
                    cx: d.center.x,
                    cy: d.center.y,
                    label: d.label,
                })
                .collect(),
            command: CommandEcho {
                surge: c.surge_m_s,
                sway: c.sway_m_s,
                heave: c.heave_m_s,
                yaw_rate: c.yaw_rate_rad_s,
            },
        }
    }
}
