//! File formats: JSON-Lines sensor and pose logs, scenario and trajectory
//! documents, litter map CSV and binary P6 pixmaps.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ekf::STATE_DIM;
use crate::mapper::{LitterClass, LitterItem, LitterMap};
use crate::scenario::{Preset, Scenario, ValidationError};
use crate::segmentation::RasterFrame;
use crate::simulator::Trajectory;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: `{kind}` record at t={t} is earlier than the previous one")]
    NonMonotonicTime { line: usize, kind: String, t: f64 },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("pixmap: {0}")]
    Pixmap(String),
}

impl IoError {
    fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(line: usize, message: impl ToString) -> Self {
        IoError::Parse {
            line,
            message: message.to_string(),
        }
    }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Orientation,
    AngularRate,
    PlanarFix,
    Depth,
    Detection,
    Command,
    Accel,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Orientation => "orientation",
            Self::AngularRate => "angular_rate",
            Self::PlanarFix => "planar_fix",
            Self::Depth => "depth",
            Self::Detection => "detection",
            Self::Command => "command",
            Self::Accel => "accel",
        }
    }

    /// Payload length; `planar_fix` may also be empty when `frame` is set.
    pub fn arity(self) -> usize {
        match self {
            Self::Orientation | Self::AngularRate | Self::Accel => 3,
            Self::PlanarFix => 2,
            Self::Depth => 1,
            // center x, center y, width, height, class index, source index (-1 if unknown)
            Self::Detection => 6,
            // surge, sway, heave, yaw rate
            Self::Command => 4,
        }
    }
}

/// One line of a sensor log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRecord {
    pub t: f64,
    pub kind: RecordKind,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

impl SensorRecord {
    pub fn new(t: f64, kind: RecordKind, data: Vec<f64>) -> Self {
        Self {
            t,
            kind,
            data,
            frame: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(format!("time {} must be finite and >= 0", self.t));
        }
        let frame_only = self.kind == RecordKind::PlanarFix && self.frame.is_some() && self.data.is_empty();
        if !frame_only && self.data.len() != self.kind.arity() {
            return Err(format!(
                "`{}` expects {} values, got {}",
                self.kind.as_str(),
                self.kind.arity(),
                self.data.len()
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err("non-finite payload value".into());
        }
        Ok(())
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[SensorRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parses a log, checking payload arity and per-kind time order.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<SensorRecord>, IoError> {
    let mut out = Vec::new();
    let mut last: HashMap<RecordKind, f64> = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| IoError::parse(n, e))?;
        let rec: SensorRecord = serde_json::from_str(&line).map_err(|e| IoError::parse(n, e))?;
        rec.validate().map_err(|m| IoError::parse(n, m))?;
        if let Some(prev) = last.insert(rec.kind, rec.t) {
            if rec.t < prev {
                return Err(IoError::NonMonotonicTime {
                    line: n,
                    kind: rec.kind.as_str().into(),
                    t: rec.t,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_log(path: &Path, records: &[SensorRecord]) -> Result<(), IoError> {
    write_records(create(path)?, records).map_err(|e| IoError::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<SensorRecord>, IoError> {
    read_records(BufReader::new(open(path)?))
}

/// Time-stamped full state, used for truth sidecars and estimate trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: f64,
    pub state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_diag: Option<Vec<f64>>,
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> Result<(), IoError> {
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        for p in poses {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })();
    res.map_err(|e| IoError::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>, IoError> {
    let mut out: Vec<PoseRecord> = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| IoError::parse(n, e))?;
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| IoError::parse(n, e))?;
        if rec.state.len() != STATE_DIM || rec.cov_diag.as_ref().is_some_and(|c| c.len() != STATE_DIM) {
            return Err(IoError::parse(n, format!("state and cov_diag need {STATE_DIM} values")));
        }
        if let Some(prev) = out.last() {
            if rec.t < prev.t {
                return Err(IoError::NonMonotonicTime {
                    line: n,
                    kind: "pose".into(),
                    t: rec.t,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Rewrites `*_deg` keys to `*_rad` (and `*_deg_s` to `*_rad_s`), scaling values.
fn degrees_to_radians(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let v = degrees_to_radians(v);
                    match k.strip_suffix("_deg").map(|b| (b, "_rad")).or_else(|| {
                        k.strip_suffix("_deg_s").map(|b| (b, "_rad_s"))
                    }) {
                        Some((base, suffix)) => (format!("{base}{suffix}"), scale_numbers(v)),
                        None => (k, v),
                    }
                })
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(degrees_to_radians).collect()),
        other => other,
    }
}

fn scale_numbers(v: Value) -> Value {
    match v {
        Value::Number(n) => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(x.to_radians()))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(scale_numbers).collect()),
        other => other,
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a scenario document. Missing fields come from the selected preset.
pub fn parse_scenario(text: &str) -> Result<Scenario, IoError> {
    let user: Value = serde_json::from_str(text).map_err(|e| IoError::parse(e.line(), e))?;
    let Value::Object(user) = degrees_to_radians(user) else {
        return Err(IoError::parse(1, "scenario must be a JSON object"));
    };
    let preset = match user.get("preset") {
        Some(p) => serde_json::from_value::<Preset>(p.clone()).map_err(|e| IoError::parse(1, e))?,
        None => Preset::default(),
    };
    let mut merged = serde_json::to_value(Scenario::from_preset(preset))
        .map_err(|e| IoError::parse(1, e))?;
    merge(&mut merged, Value::Object(user));
    let scenario: Scenario = serde_json::from_value(merged).map_err(|e| IoError::parse(1, e))?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| IoError::io(path, e))?;
    parse_scenario(&text)
}

pub fn scenario_to_string(s: &Scenario) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("scenario serialises");
    text.push('\n');
    text
}

pub fn save_scenario(path: &Path, s: &Scenario) -> Result<(), IoError> {
    std::fs::write(path, scenario_to_string(s)).map_err(|e| IoError::io(path, e))
}

/// Unit-suffixed scenario keys are also accepted in trajectory documents.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, IoError> {
    let v: Value = serde_json::from_str(text).map_err(|e| IoError::parse(e.line(), e))?;
    let t: Trajectory =
        serde_json::from_value(degrees_to_radians(v)).map_err(|e| IoError::parse(1, e))?;
    t.validate()?;
    Ok(t)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_trajectory(&text)
}

pub fn save_trajectory(path: &Path, t: &Trajectory) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(t).expect("trajectory serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub const MAP_CSV_HEADER: [&str; 7] = [
    "index",
    "x_m",
    "y_m",
    "z_m",
    "label",
    "first_seen_s",
    "observations",
];

#[derive(Debug, Serialize, Deserialize)]
struct MapRow {
    index: usize,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    label: LitterClass,
    first_seen_s: f64,
    observations: u32,
}

pub fn write_map_csv<W: Write>(w: W, map: &LitterMap<f64>) -> Result<(), csv::Error> {
    // Header written by hand so that an empty map still has one.
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(MAP_CSV_HEADER)?;
    for (index, item) in map.items().iter().enumerate() {
        wr.serialize(MapRow {
            index,
            x_m: item.position.x,
            y_m: item.position.y,
            z_m: item.position.z,
            label: item.label,
            first_seen_s: item.first_seen,
            observations: item.observations,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_map(path: &Path, map: &LitterMap<f64>) -> Result<(), IoError> {
    write_map_csv(create(path)?, map).map_err(|e| IoError::parse(0, e))
}

pub fn read_map_csv<R: Read>(r: R, dedup_radius: f64) -> Result<LitterMap<f64>, IoError> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| IoError::parse(1, e))?;
    if header.iter().ne(MAP_CSV_HEADER) {
        return Err(IoError::parse(1, format!("expected header {}", MAP_CSV_HEADER.join(","))));
    }
    let mut items = Vec::new();
    for (i, row) in rd.deserialize::<MapRow>().enumerate() {
        let row = row.map_err(|e| IoError::parse(i + 2, e))?;
        items.push(LitterItem {
            position: nalgebra::Point3::new(row.x_m, row.y_m, row.z_m),
            label: row.label,
            first_seen: row.first_seen_s,
            observations: row.observations,
        });
    }
    Ok(LitterMap::from_items(items, dedup_radius))
}

pub fn load_map(path: &Path, dedup_radius: f64) -> Result<LitterMap<f64>, IoError> {
    read_map_csv(open(path)?, dedup_radius)
}

pub fn write_pixmap<W: Write>(mut w: W, frame: &RasterFrame) -> io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", frame.width(), frame.height())?;
    w.write_all(frame.data())?;
    w.flush()
}

/// Binary PPM with maxval 255. Comments are allowed in the header; any byte
/// after the pixel data is an error.
pub fn parse_pixmap(bytes: &[u8]) -> Result<RasterFrame, IoError> {
    let err = |m: &str| IoError::Pixmap(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected a decimal number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("expected whitespace after maxval"));
    }
    pos += 1;
    let data = &bytes[pos..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| err("image too large"))?;
    if data.len() != expected {
        return Err(IoError::Pixmap(format!(
            "expected {expected} bytes of pixel data, found {}",
            data.len()
        )));
    }
    RasterFrame::new(width, height, data.to_vec()).map_err(|e| IoError::Pixmap(e.to_string()))
}

pub fn load_pixmap(path: &Path) -> Result<RasterFrame, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    parse_pixmap(&bytes)
}

pub fn save_pixmap(path: &Path, frame: &RasterFrame) -> Result<(), IoError> {
    write_pixmap(create(path)?, frame).map_err(|e| IoError::io(path, e))
}

/// Writes a JSON value followed by a newline.
pub fn save_json(path: &Path, value: &Map<String, Value>) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn kind_strategy() -> impl Strategy<Value = RecordKind> {
        prop_oneof![
            Just(RecordKind::Orientation),
            Just(RecordKind::AngularRate),
            Just(RecordKind::PlanarFix),
            Just(RecordKind::Depth),
            Just(RecordKind::Detection),
            Just(RecordKind::Command),
            Just(RecordKind::Accel),
        ]
    }

    #[test]
    fn empty_log_is_valid() {
        assert!(read_records(Cursor::new("")).unwrap().is_empty());
    }

    #[test]
    fn unknown_kind_names_line() {
        let text = "{\"t\":0.0,\"kind\":\"depth\",\"data\":[-0.3]}\n{\"t\":0.1,\"kind\":\"sonar\",\"data\":[1.0]}\n";
        match read_records(Cursor::new(text)) {
            Err(IoError::Parse { line: 2, message }) => assert!(message.contains("sonar")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_rejected() {
        let text = "{\"t\":0.0,\"kind\":\"depth\",\"data\":[-0.3]} x\n";
        assert!(matches!(read_records(Cursor::new(text)), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(read_records(Cursor::new("\n")), Err(IoError::Parse { line: 1, .. })));
    }

    #[test]
    fn arity_and_order_checked() {
        let bad = "{\"t\":0.0,\"kind\":\"depth\",\"data\":[-0.3, 1.0]}\n";
        assert!(matches!(read_records(Cursor::new(bad)), Err(IoError::Parse { line: 1, .. })));
        let order = "{\"t\":1.0,\"kind\":\"depth\",\"data\":[0]}\n{\"t\":0.5,\"kind\":\"planar_fix\",\"data\":[0,0]}\n{\"t\":0.5,\"kind\":\"depth\",\"data\":[0]}\n";
        assert!(matches!(
            read_records(Cursor::new(order)),
            Err(IoError::NonMonotonicTime { line: 3, .. })
        ));
    }

    #[test]
    fn frame_only_planar_fix_allowed() {
        let text = "{\"t\":0.0,\"kind\":\"planar_fix\",\"data\":[],\"frame\":\"f0.ppm\"}\n";
        let recs = read_records(Cursor::new(text)).unwrap();
        assert_eq!(recs[0].frame.as_deref(), Some("f0.ppm"));
    }

    #[test]
    fn writer_terminates_lines() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[SensorRecord::new(0.5, RecordKind::Depth, vec![-0.25])]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"t\":0.5,\"kind\":\"depth\",\"data\":[-0.25]}\n"
        );
    }

    #[test]
    fn empty_scenario_takes_pool_defaults() {
        let s = parse_scenario("{}").unwrap();
        assert_eq!((s.pool_length_m, s.pool_width_m, s.water_depth_m), (5.5, 2.7, 1.0));
        assert_eq!(s.overhead_camera.position_m, [0.0, 0.0, 1.2]);
        assert_eq!(s, Scenario::pool());
    }

    #[test]
    fn tank_preset_with_overrides() {
        let s = parse_scenario(r#"{"preset":"tank","rov_camera":{"tilt_deg":45}}"#).unwrap();
        assert_eq!(s.pool_length_m, 1.1);
        assert!((s.rov_camera.tilt_rad - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(s.rov_camera.intrinsics.fx_px, 500.0);
    }

    #[test]
    fn degree_rate_converted() {
        let s = parse_scenario(r#"{"ang_rate_sigma_deg_s":0.04}"#).unwrap();
        assert!((s.ang_rate_sigma_rad_s - 6.98e-4).abs() < 1e-6);
        assert_eq!(s.ang_rate_sigma_rad_s, 0.04f64.to_radians());
        let s = parse_scenario(r#"{"orientation_sigma_deg":[1,2,3]}"#).unwrap();
        assert_eq!(s.orientation_sigma_rad[2], 3.0f64.to_radians());
    }

    #[test]
    fn scenario_validation_names_field() {
        match parse_scenario(r#"{"water_depth_m": -1}"#) {
            Err(IoError::Validation(v)) => assert_eq!(v.field, "water_depth_m"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_scenario(r#"{"depth_m": 1}"#), Err(IoError::Parse { .. })));
        assert!(matches!(parse_scenario("{} {}"), Err(IoError::Parse { .. })));
    }

    #[test]
    fn scenario_save_load_fixpoint() {
        let first = parse_scenario(r#"{"preset":"tank","seed":7,"initial_yaw_deg":30}"#).unwrap();
        let text = scenario_to_string(&first);
        let second = parse_scenario(&text).unwrap();
        assert_eq!(first, second);
        assert_eq!(text, scenario_to_string(&second));
    }

    #[test]
    fn map_csv_header_and_round_trip() {
        let mut map = LitterMap::new(0.3);
        map.insert(nalgebra::Point3::new(0.5, -0.25, -1.0), LitterClass::Glass, 1.5);
        map.insert(nalgebra::Point3::new(1.5, 0.75, -1.0), LitterClass::Metal, 2.0);
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &map).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,x_m,y_m,z_m,label,first_seen_s,observations\n0,0.5,-0.25,-1.0,glass,1.5,1\n"), "{text}");
        assert_eq!(read_map_csv(Cursor::new(buf), 0.3).unwrap(), map);
    }

    #[test]
    fn pixmap_round_trip_and_strictness() {
        let frame = RasterFrame::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut buf = Vec::new();
        write_pixmap(&mut buf, &frame).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(parse_pixmap(&buf).unwrap(), frame);

        let commented = b"P6\n# made by hand\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        assert_eq!(parse_pixmap(commented).unwrap(), frame);

        let mut long = buf.clone();
        long.push(0);
        assert!(parse_pixmap(&long).is_err());
        assert!(parse_pixmap(&buf[..buf.len() - 1]).is_err());
        assert!(parse_pixmap(b"P3\n1 1\n255\n\x00\x00\x00").is_err());
        assert!(parse_pixmap(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    }

    proptest! {
        #[test]
        fn log_round_trip_is_lossless(
            raw in proptest::collection::vec((0.0f64..1e4, kind_strategy(), proptest::collection::vec(-1e6f64..1e6, 6)), 0..200)
        ) {
            let mut raw = raw;
            raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let records: Vec<_> = raw
                .into_iter()
                .map(|(t, kind, mut data)| {
                    data.truncate(kind.arity());
                    SensorRecord::new(t, kind, data)
                })
                .collect();
            let mut buf = Vec::new();
            write_records(&mut buf, &records).unwrap();
            prop_assert_eq!(read_records(Cursor::new(buf)).unwrap(), records);
        }
    }
}
