//! Simulation and pipeline configuration.
//!
//! Every physical quantity carries its unit in the key name. The pool X axis
//! runs along its length, Y along its width.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::{ProcessNoise, STATE_DIM};
use crate::geometry::{CameraIntrinsics, CameraModel};
use crate::mapper::{CameraMount, LitterClass, DEFAULT_DEDUP_RADIUS};
use crate::segmentation::HsvThreshold;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

fn invalid(field: &str, message: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Pool,
    Tank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx_px: f64,
    pub fy_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl CameraConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        CameraIntrinsics {
            fx: self.fx_px,
            fy: self.fy_px,
            cx: self.cx_px,
            cy: self.cy_px,
        }
    }

    /// Whether a pixel center lies on the sensor.
    pub fn in_frame(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= f64::from(self.width_px) - 1.0 && y <= f64::from(self.height_px) - 1.0
    }

    fn validate(&self, name: &str) -> Result<(), ValidationError> {
        if !(self.fx_px > 0.0 && self.fy_px > 0.0) {
            return Err(invalid(&format!("{name}.fx_px"), "focal lengths must be positive"));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(invalid(&format!("{name}.width_px"), "image size must be non-zero"));
        }
        Ok(())
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx_px: 500.0,
            fy_px: 500.0,
            cx_px: 319.5,
            cy_px: 239.5,
            width_px: 640,
            height_px: 480,
        }
    }
}

/// Fixed camera above the pool, looking straight down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadCameraConfig {
    pub position_m: [f64; 3],
    pub intrinsics: CameraConfig,
}

impl Default for OverheadCameraConfig {
    fn default() -> Self {
        Self {
            position_m: [0.0, 0.0, 1.2],
            intrinsics: CameraConfig {
                fx_px: 450.0,
                fy_px: 450.0,
                cx_px: 959.5,
                cy_px: 539.5,
                width_px: 1920,
                height_px: 1080,
            },
        }
    }
}

impl OverheadCameraConfig {
    pub fn model(&self) -> CameraModel<f64> {
        let [x, y, z] = self.position_m;
        CameraModel::looking_down(self.intrinsics.intrinsics(), Point3::new(x, y, z))
    }
}

/// Camera on the ROV: body-frame offset (x forward, z up) and downward tilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RovCameraConfig {
    pub offset_m: [f64; 3],
    pub tilt_rad: f64,
    pub intrinsics: CameraConfig,
}

impl Default for RovCameraConfig {
    fn default() -> Self {
        Self {
            offset_m: [0.2, 0.0, 0.0],
            tilt_rad: 0.0,
            intrinsics: CameraConfig::default(),
        }
    }
}

impl RovCameraConfig {
    pub fn mount(&self) -> CameraMount<f64> {
        let [x, y, z] = self.offset_m;
        CameraMount {
            offset: Vector3::new(x, y, z),
            tilt: self.tilt_rad,
        }
    }
}

/// Coloured patch on top of the ROV and the hull footprint drawn under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub size_m: [f64; 2],
    /// Height of the patch above the body origin.
    pub height_m: f64,
    pub hull_size_m: [f64; 2],
    pub min_area_px: usize,
    pub h_range: [u8; 2],
    pub s_range: [u8; 2],
    pub v_range: [u8; 2],
}

impl Default for PatchConfig {
    fn default() -> Self {
        let t = HsvThreshold::YELLOW;
        Self {
            size_m: [0.2, 0.1],
            height_m: 0.1,
            hull_size_m: [0.46, 0.34],
            min_area_px: 25,
            h_range: [t.h_min, t.h_max],
            s_range: [t.s_min, t.s_max],
            v_range: [t.v_min, t.v_max],
        }
    }
}

impl PatchConfig {
    pub fn threshold(&self) -> HsvThreshold {
        HsvThreshold {
            h_min: self.h_range[0],
            h_max: self.h_range[1],
            s_min: self.s_range[0],
            s_max: self.s_range[1],
            v_min: self.v_range[0],
            v_max: self.v_range[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LitterSpec {
    /// Floor position; Z is always `-water_depth_m`.
    pub position_m: [f64; 2],
    pub label: LitterClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub sim_hz: f64,
    pub orientation_hz: f64,
    pub angular_rate_hz: f64,
    pub depth_hz: f64,
    pub overhead_hz: f64,
    pub detection_hz: f64,
    pub accel_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            sim_hz: 20.0,
            orientation_hz: 20.0,
            angular_rate_hz: 20.0,
            depth_hz: 10.0,
            overhead_hz: 10.0,
            detection_hz: 5.0,
            accel_hz: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Variance rates per state, state order.
    pub process_noise: [f64; STATE_DIM],
    /// Lower bound applied to every measurement standard deviation.
    pub sigma_floor: f64,
    pub fuse_accel: bool,
    /// Detections are dropped while the yaw variance exceeds this.
    pub max_yaw_variance_rad2: f64,
    pub dedup_radius_m: f64,
    pub match_gate_m: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            process_noise: ProcessNoise::<f64>::TUNED,
            sigma_floor: 1e-6,
            fuse_accel: false,
            max_yaw_variance_rad2: 0.1,
            dedup_radius_m: DEFAULT_DEDUP_RADIUS,
            match_gate_m: crate::mapper::DEFAULT_MATCH_GATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub preset: Preset,
    pub pool_length_m: f64,
    pub pool_width_m: f64,
    pub pool_height_m: f64,
    pub water_depth_m: f64,
    pub overhead_camera: OverheadCameraConfig,
    pub rov_camera: RovCameraConfig,
    pub patch: PatchConfig,
    pub litter: Vec<LitterSpec>,
    /// Roll, pitch, yaw.
    pub orientation_sigma_rad: [f64; 3],
    pub ang_rate_sigma_rad_s: f64,
    pub accel_sigma_m_s2: f64,
    pub depth_sigma_m: f64,
    /// Filter-side planar fix noise. The simulator injects pixel noise instead.
    pub planar_sigma_m: [f64; 2],
    pub overhead_pixel_sigma_px: f64,
    pub detection_pixel_sigma_px: f64,
    pub detection_bias_px: [f64; 2],
    pub miss_rate: f64,
    pub max_detection_range_m: f64,
    pub litter_size_m: f64,
    pub rates: SensorRates,
    pub actuator_tau_s: f64,
    pub max_speed_m_s: f64,
    pub max_yaw_rate_rad_s: f64,
    pub initial_position_m: [f64; 3],
    pub initial_yaw_rad: f64,
    pub seed: u64,
    pub filter: FilterConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::pool()
    }
}

impl Scenario {
    /// 5.5 x 2.7 m pool, 1 m of water, five litter items on the floor.
    pub fn pool() -> Self {
        use LitterClass::*;
        let litter = [
            ([-1.8, 0.55], Plastic),
            ([-0.8, -0.6], Metal),
            ([0.2, 0.45], Cardboard),
            ([1.1, -0.5], Glass),
            ([2.0, 0.6], Plastic),
        ]
        .into_iter()
        .map(|(position_m, label)| LitterSpec { position_m, label })
        .collect();
        Self {
            name: "pool".into(),
            preset: Preset::Pool,
            pool_length_m: 5.5,
            pool_width_m: 2.7,
            pool_height_m: 1.2,
            water_depth_m: 1.0,
            overhead_camera: OverheadCameraConfig::default(),
            rov_camera: RovCameraConfig::default(),
            patch: PatchConfig::default(),
            litter,
            orientation_sigma_rad: [0.0018, 0.0003, 0.0054],
            ang_rate_sigma_rad_s: 0.04_f64.to_radians(),
            accel_sigma_m_s2: 0.01,
            depth_sigma_m: 0.0024,
            planar_sigma_m: [0.012, 0.08],
            overhead_pixel_sigma_px: 1.5,
            detection_pixel_sigma_px: 3.0,
            detection_bias_px: [0.0, 0.0],
            miss_rate: 0.1,
            max_detection_range_m: 3.0,
            litter_size_m: 0.15,
            rates: SensorRates::default(),
            actuator_tau_s: 0.5,
            max_speed_m_s: 0.5,
            max_yaw_rate_rad_s: 0.5,
            initial_position_m: [0.0, 0.0, -0.3],
            initial_yaw_rad: 0.0,
            seed: 0,
            filter: FilterConfig::default(),
        }
    }

    /// Small validation tank. X spans the +-0.55 m corner marks, Y is 1 m.
    pub fn tank() -> Self {
        Self {
            name: "tank".into(),
            preset: Preset::Tank,
            pool_length_m: 1.1,
            pool_width_m: 1.0,
            pool_height_m: 1.0,
            water_depth_m: 1.0,
            litter: Vec::new(),
            ..Self::pool()
        }
    }

    pub fn from_preset(p: Preset) -> Self {
        match p {
            Preset::Pool => Self::pool(),
            Preset::Tank => Self::tank(),
        }
    }

    pub fn litter_points(&self) -> Vec<Point3<f64>> {
        self.litter
            .iter()
            .map(|l| Point3::new(l.position_m[0], l.position_m[1], -self.water_depth_m))
            .collect()
    }

    pub fn half_extent(&self) -> (f64, f64) {
        (self.pool_length_m / 2.0, self.pool_width_m / 2.0)
    }

    pub fn inside_pool(&self, x: f64, y: f64) -> bool {
        let (hx, hy) = self.half_extent();
        x.abs() <= hx && y.abs() <= hy
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / self.rates.sim_hz
    }

    /// Sets every injected noise term and miss rate to zero.
    pub fn without_noise(mut self) -> Self {
        self.orientation_sigma_rad = [0.0; 3];
        self.ang_rate_sigma_rad_s = 0.0;
        self.accel_sigma_m_s2 = 0.0;
        self.depth_sigma_m = 0.0;
        self.planar_sigma_m = [0.0; 2];
        self.overhead_pixel_sigma_px = 0.0;
        self.detection_pixel_sigma_px = 0.0;
        self.detection_bias_px = [0.0; 2];
        self.miss_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let positive = [
            ("pool_length_m", self.pool_length_m),
            ("pool_width_m", self.pool_width_m),
            ("pool_height_m", self.pool_height_m),
            ("water_depth_m", self.water_depth_m),
            ("actuator_tau_s", self.actuator_tau_s),
            ("max_speed_m_s", self.max_speed_m_s),
            ("max_yaw_rate_rad_s", self.max_yaw_rate_rad_s),
            ("max_detection_range_m", self.max_detection_range_m),
            ("litter_size_m", self.litter_size_m),
            ("rates.sim_hz", self.rates.sim_hz),
            ("rates.orientation_hz", self.rates.orientation_hz),
            ("rates.angular_rate_hz", self.rates.angular_rate_hz),
            ("rates.depth_hz", self.rates.depth_hz),
            ("rates.overhead_hz", self.rates.overhead_hz),
            ("rates.detection_hz", self.rates.detection_hz),
            ("rates.accel_hz", self.rates.accel_hz),
            ("filter.sigma_floor", self.filter.sigma_floor),
            ("filter.dedup_radius_m", self.filter.dedup_radius_m),
            ("filter.match_gate_m", self.filter.match_gate_m),
            ("filter.max_yaw_variance_rad2", self.filter.max_yaw_variance_rad2),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.water_depth_m > self.pool_height_m {
            return Err(invalid("water_depth_m", "exceeds pool_height_m"));
        }
        for (field, v) in [
            ("rates.orientation_hz", self.rates.orientation_hz),
            ("rates.angular_rate_hz", self.rates.angular_rate_hz),
            ("rates.depth_hz", self.rates.depth_hz),
            ("rates.overhead_hz", self.rates.overhead_hz),
            ("rates.detection_hz", self.rates.detection_hz),
            ("rates.accel_hz", self.rates.accel_hz),
        ] {
            if v > self.rates.sim_hz {
                return Err(invalid(field, "cannot exceed rates.sim_hz"));
            }
        }
        let sigmas = self
            .orientation_sigma_rad
            .iter()
            .chain(&self.planar_sigma_m)
            .chain([
                &self.ang_rate_sigma_rad_s,
                &self.accel_sigma_m_s2,
                &self.depth_sigma_m,
                &self.overhead_pixel_sigma_px,
                &self.detection_pixel_sigma_px,
            ]);
        for s in sigmas {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(invalid("sigma", format!("noise levels must be >= 0, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(invalid("miss_rate", "must be within [0, 1]"));
        }
        if self.filter.process_noise.iter().any(|q| q.is_nan() || *q < 0.0) {
            return Err(invalid("filter.process_noise", "variances must be >= 0"));
        }
        self.overhead_camera.intrinsics.validate("overhead_camera")?;
        self.rov_camera.intrinsics.validate("rov_camera")?;
        if self.overhead_camera.position_m[2] <= 0.0 {
            return Err(invalid("overhead_camera.position_m", "camera must be above the water"));
        }
        if self.patch.min_area_px == 0 {
            return Err(invalid("patch.min_area_px", "must be at least 1"));
        }
        self.patch
            .threshold()
            .validate()
            .map_err(|e| invalid("patch", e.to_string()))?;
        for (i, l) in self.litter.iter().enumerate() {
            if !self.inside_pool(l.position_m[0], l.position_m[1]) {
                return Err(invalid(&format!("litter[{i}].position_m"), "outside the pool"));
            }
        }
        let [x, y, z] = self.initial_position_m;
        if !self.inside_pool(x, y) || z > 0.0 || z < -self.water_depth_m {
            return Err(invalid("initial_position_m", "outside the water volume"));
        }
        Ok(())
    }
}
