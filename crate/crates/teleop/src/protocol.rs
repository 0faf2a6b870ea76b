//! JSON text frames exchanged over `/ws`.

use poolmap_core::mapper::LitterClass;
use poolmap_core::scenario::Scenario;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Cmd {
        #[serde(default)]
        surge: f64,
        #[serde(default)]
        sway: f64,
        #[serde(default)]
        heave: f64,
        #[serde(default)]
        yaw_rate: f64,
    },
    Reset,
    Config { show_truth: bool },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let Self::Cmd {
            surge,
            sway,
            heave,
            yaw_rate,
        } = msg
        {
            if ![surge, sway, heave, yaw_rate].iter().all(|v| v.is_finite()) {
                return Err("command values must be finite".into());
            }
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMark {
    pub x: f64,
    pub y: f64,
    pub label: LitterClass,
    pub observations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMark {
    pub cx: f64,
    pub cy: f64,
    pub label: LitterClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandEcho {
    pub surge: f64,
    pub sway: f64,
    pub heave: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    pub estimate: Vec<f64>,
    pub cov_diag: Vec<f64>,
    /// Estimated (X, Y) history, oldest first, downsampled and capped.
    pub history: Vec<[f64; 2]>,
    pub map: Vec<MapMark>,
    pub detections: Vec<DetectionMark>,
    pub command: CommandEcho,
}

impl Snapshot {
    pub fn without_truth(&self) -> Self {
        Self {
            truth: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage<'a> {
    Hello { v: u32, scenario: &'a Scenario },
    Snapshot(&'a Snapshot),
    Error { msg: String },
}

impl ServerMessage<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
