//! Offline replay: sensor log in, pose estimates and litter map out.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use nalgebra::Point3;
use thiserror::Error;

use crate::ekf::{Covariance15, Ekf, EkfError, Measurement, MeasurementKind, Pose15, ProcessNoise};
use crate::geometry::inverse_project;
use crate::io::{load_pixmap, IoError, PoseRecord, RecordKind, SensorRecord};
use crate::mapper::{locate_detection, LitterMap};
use crate::scenario::Scenario;
use crate::segmentation::locate_patch;
use crate::simulator::DetectionEvent;

/// Gap between planar fixes after which the run is flagged as degraded.
pub const PLANAR_GAP_WARN_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("filter failed at t={t}: {source}")]
    Filter { t: f64, source: EkfError },
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Directory against which frame paths in planar-fix records are resolved.
    pub frame_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOutput {
    pub estimates: Vec<PoseRecord>,
    pub map: LitterMap<f64>,
    pub skipped_updates: usize,
    pub skipped_detections: usize,
    pub warnings: Vec<String>,
}

impl Default for LitterMap<f64> {
    fn default() -> Self {
        LitterMap::new(crate::mapper::DEFAULT_DEDUP_RADIUS)
    }
}

fn variances(sigmas: &[f64], floor: f64) -> Vec<f64> {
    sigmas.iter().map(|s| s.max(floor).powi(2)).collect()
}

/// Streaming estimator: feed records in log order.
#[derive(Debug, Clone)]
pub struct Pipeline {
    scenario: Scenario,
    ekf: Ekf<f64>,
    map: LitterMap<f64>,
    frame_dir: Option<PathBuf>,
    last_planar: Option<f64>,
    planar_gap_flagged: bool,
    pub skipped_updates: usize,
    pub skipped_detections: usize,
    pub warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(scenario: Scenario, options: ReplayOptions) -> Self {
        let q = ProcessNoise(scenario.filter.process_noise);
        let ekf = Ekf::new(Pose15::zero(), Covariance15::initial(), q);
        let map = LitterMap::new(scenario.filter.dedup_radius_m);
        Self {
            scenario,
            ekf,
            map,
            frame_dir: options.frame_dir,
            last_planar: None,
            planar_gap_flagged: false,
            skipped_updates: 0,
            skipped_detections: 0,
            warnings: Vec::new(),
        }
    }

    pub fn ekf(&self) -> &Ekf<f64> {
        &self.ekf
    }

    pub fn map(&self) -> &LitterMap<f64> {
        &self.map
    }

    pub fn reset(&mut self) {
        *self = Self::new(
            self.scenario.clone(),
            ReplayOptions {
                frame_dir: self.frame_dir.clone(),
            },
        );
    }

    fn degrade(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    fn measurement(&mut self, r: &SensorRecord) -> Result<Option<Measurement<f64>>, PipelineError> {
        let frame_fix = if r.kind == RecordKind::PlanarFix && r.data.is_empty() {
            match self.fix_from_frame(r)? {
                Some(v) => Some(v),
                None => return Ok(None),
            }
        } else {
            None
        };
        let s = &self.scenario;
        let floor = s.filter.sigma_floor;
        let (kind, values, sigmas) = match r.kind {
            RecordKind::Orientation => (MeasurementKind::Orientation, r.data.clone(), s.orientation_sigma_rad.to_vec()),
            RecordKind::AngularRate => (MeasurementKind::AngularRate, r.data.clone(), vec![s.ang_rate_sigma_rad_s; 3]),
            RecordKind::Depth => (MeasurementKind::Depth, r.data.clone(), vec![s.depth_sigma_m]),
            RecordKind::Accel if s.filter.fuse_accel => {
                (MeasurementKind::Acceleration, r.data.clone(), vec![s.accel_sigma_m_s2; 3])
            }
            RecordKind::PlanarFix => {
                let values = frame_fix.unwrap_or_else(|| r.data.clone());
                (MeasurementKind::PlanarFix, values, s.planar_sigma_m.to_vec())
            }
            _ => return Ok(None),
        };
        let m = Measurement::new(kind, values, variances(&sigmas, floor))
            .map_err(|source| PipelineError::Filter { t: r.t, source })?;
        Ok(Some(m))
    }

    /// Segments the overhead frame and back-projects the patch centroid onto
    /// the plane at the estimated patch height.
    fn fix_from_frame(&mut self, r: &SensorRecord) -> Result<Option<Vec<f64>>, PipelineError> {
        let Some(name) = &r.frame else { return Ok(None) };
        let path = match &self.frame_dir {
            Some(dir) => dir.join(name),
            None => Path::new(name).to_path_buf(),
        };
        let frame = load_pixmap(&path)?;
        let s = &self.scenario;
        let center = match locate_patch(&frame, &s.patch.threshold(), s.patch.min_area_px) {
            Ok(c) => c,
            Err(e) => {
                debug!("t={}: no patch in {}: {e}", r.t, path.display());
                return Ok(None);
            }
        };
        let (prior, _) = self
            .ekf
            .peek(r.t)
            .map_err(|source| PipelineError::Filter { t: r.t, source })?;
        let z = prior.position().z + s.patch.height_m;
        match inverse_project(&s.overhead_camera.model(), &center, z) {
            Ok(p) => Ok(Some(vec![p.x, p.y])),
            Err(e) => {
                debug!("t={}: patch back-projection failed: {e}", r.t);
                Ok(None)
            }
        }
    }

    fn handle_detection(&mut self, r: &SensorRecord) -> Result<(), PipelineError> {
        let Some(det) = DetectionEvent::from_record(r) else {
            self.skipped_detections += 1;
            return Ok(());
        };
        let (prior, cov) = self
            .ekf
            .peek(r.t)
            .map_err(|source| PipelineError::Filter { t: r.t, source })?;
        let yaw_var = cov.get(crate::ekf::ANG + 2, crate::ekf::ANG + 2);
        if yaw_var > self.scenario.filter.max_yaw_variance_rad2 {
            self.skipped_detections += 1;
            debug!("t={}: yaw too uncertain ({yaw_var}) to place detection", r.t);
            return Ok(());
        }
        let cam = &self.scenario.rov_camera;
        match locate_detection(
            &det.center,
            &prior,
            &cam.mount(),
            cam.intrinsics.intrinsics(),
            self.scenario.water_depth_m,
        ) {
            Ok(p) if self.scenario.inside_pool(p.x, p.y) => {
                self.map.insert(p, det.label, r.t);
            }
            Ok(p) => {
                self.skipped_detections += 1;
                debug!("t={}: detection lands outside the pool at ({}, {})", r.t, p.x, p.y);
            }
            Err(e) => {
                self.skipped_detections += 1;
                debug!("t={}: detection not placed: {e}", r.t);
            }
        }
        Ok(())
    }

    /// Processes one record. Returns the posterior when the filter was updated.
    pub fn push(&mut self, r: &SensorRecord) -> Result<Option<PoseRecord>, PipelineError> {
        if r.kind == RecordKind::Detection {
            self.handle_detection(r)?;
            return Ok(None);
        }
        if let Some(last) = self.last_planar {
            if r.t - last > PLANAR_GAP_WARN_S && !self.planar_gap_flagged {
                self.planar_gap_flagged = true;
                self.degrade(format!("no planar fix since t={last:.2}; running on dead reckoning"));
            }
        }
        let Some(m) = self.measurement(r)? else { return Ok(None) };
        if m.kind == MeasurementKind::PlanarFix {
            if self.planar_gap_flagged {
                self.degrade(format!("planar fix recovered at t={:.2}", r.t));
            }
            self.last_planar = Some(r.t);
            self.planar_gap_flagged = false;
        }
        match self.ekf.process(r.t, &m) {
            Ok(est) => Ok(Some(pose_record(est.t, &est.state, &est.cov))),
            Err(EkfError::NonMonotonicTime { last, t }) => Err(PipelineError::Filter {
                t: r.t,
                source: EkfError::NonMonotonicTime { last, t },
            }),
            Err(e) => {
                self.skipped_updates += 1;
                warn!("t={}: {:?} update skipped: {e}", r.t, m.kind);
                Ok(None)
            }
        }
    }

    pub fn finish(self) -> ReplayOutput {
        ReplayOutput {
            estimates: Vec::new(),
            map: self.map,
            skipped_updates: self.skipped_updates,
            skipped_detections: self.skipped_detections,
            warnings: self.warnings,
        }
    }
}

pub fn pose_record(t: f64, state: &Pose15<f64>, cov: &Covariance15<f64>) -> PoseRecord {
    PoseRecord {
        t,
        state: state.as_slice().to_vec(),
        cov_diag: Some(cov.diagonal().as_slice().to_vec()),
    }
}

/// Replays a whole log.
pub fn replay(scenario: &Scenario, records: &[SensorRecord], options: ReplayOptions) -> Result<ReplayOutput, PipelineError> {
    let mut p = Pipeline::new(scenario.clone(), options);
    let mut estimates = Vec::new();
    for r in records {
        if let Some(e) = p.push(r)? {
            estimates.push(e);
        }
    }
    let mut out = p.finish();
    out.estimates = estimates;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("estimate and truth trajectories share no timestamps")]
pub struct NoOverlap;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoseRmse {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub samples: usize,
}

/// Per-axis position RMSE, pairing each estimate with the nearest truth sample
/// no more than `max_dt` away.
pub fn pose_rmse(estimates: &[PoseRecord], truth: &[PoseRecord], max_dt: f64) -> Result<PoseRmse, NoOverlap> {
    let mut sum = [0.0; 3];
    let mut n = 0;
    for e in estimates {
        let i = truth.partition_point(|r| r.t < e.t);
        let nearest = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| truth.get(j))
            .min_by(|a, b| (a.t - e.t).abs().total_cmp(&(b.t - e.t).abs()));
        let Some(tr) = nearest.filter(|tr| (tr.t - e.t).abs() <= max_dt) else { continue };
        for (k, s) in sum.iter_mut().enumerate() {
            *s += (e.state[k] - tr.state[k]).powi(2);
        }
        n += 1;
    }
    if n == 0 {
        return Err(NoOverlap);
    }
    let r = |s: f64| (s / n as f64).sqrt();
    Ok(PoseRmse {
        x: r(sum[0]),
        y: r(sum[1]),
        z: r(sum[2]),
        samples: n,
    })
}

pub fn map_points(map: &LitterMap<f64>) -> Vec<Point3<f64>> {
    map.items().iter().map(|i| i.position).collect()
}
