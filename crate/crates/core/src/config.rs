//! Scenario configuration: YAML parsing, defaults, validation and
//! serialization.
//!
//! The accepted schema is the CARLA-style `config.yaml` layout (a `carla:`
//! block, `output_dir`, `max_frames`, `weather:` and `spawn_actors:`), plus
//! two optional extensions: a per-sensor `motion:` block (with an
//! `attach_to:` key for attached sensors) and a top-level `patches:` list of
//! chroma-key placeholders. Connection keys (`host`, `port`, `timeout`,
//! `retry`, `traffic_manager_port`) are accepted and ignored with a warning.

use crate::geometry::{Rotator, Transform, Vec3};
use crate::scene::layouts;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_WALKER_SPEED: f64 = 1.4;
pub const DEFAULT_FOV: f64 = 90.0;
pub const DEFAULT_TOWNMAP: &str = "Town10HD";
pub const DEFAULT_OUTPUT_DIR: &str = "_out";
/// Field of view above which a warning is emitted (focal length collapses).
pub const DEGENERATE_FOV: f64 = 170.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("YAML syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("type error at `{path}`: expected {expected}")]
    Type { path: String, expected: String },
    #[error("missing required key `{path}`")]
    Missing { path: String },
    #[error("constraint violation at `{path}`: {message}")]
    Constraint { path: String, message: String },
}

/// Non-fatal note produced while parsing (unknown or ignored keys, clamps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Cross-field problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub seed: u64,
    pub fps: u32,
    pub max_frames: u32,
    pub townmap: String,
    pub output_dir: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherConfig {
    pub cloudiness: f64,
    pub precipitation: f64,
    pub precipitation_deposits: f64,
    pub wind_intensity: f64,
    pub sun_azimuth_angle: f64,
    pub sun_altitude_angle: f64,
    pub fog_density: f64,
    pub fog_distance: f64,
    pub wetness: f64,
}

impl Default for WeatherConfig {
    /// Plain daylight: everything zero, sun 45° above the horizon.
    fn default() -> Self {
        Self {
            cloudiness: 0.0,
            precipitation: 0.0,
            precipitation_deposits: 0.0,
            wind_intensity: 0.0,
            sun_azimuth_angle: 0.0,
            sun_altitude_angle: 45.0,
            fog_density: 0.0,
            fog_distance: 0.0,
            wetness: 0.0,
        }
    }
}

impl WeatherConfig {
    /// The sunny block used by the reference two-walker scenario.
    pub fn sunny() -> Self {
        Self {
            sun_altitude_angle: 10.0,
            ..Self::default()
        }
    }

    pub fn rainy() -> Self {
        Self {
            cloudiness: 60.0,
            precipitation: 60.0,
            precipitation_deposits: 60.0,
            wind_intensity: 60.0,
            sun_azimuth_angle: -1.0,
            sun_altitude_angle: 15.0,
            fog_density: 3.0,
            fog_distance: 0.75,
            wetness: 0.0,
        }
    }

    pub fn foggy() -> Self {
        Self {
            fog_density: 100.0,
            fog_distance: 1.0,
            ..Self::sunny()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    /// Blueprint pattern, possibly ending in `*`.
    pub blueprint: String,
    pub role_name: String,
    pub speed: f64,
    pub spawn: Transform,
    pub destination: Option<Transform>,
    pub is_invincible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(rename = "sensor.camera.rgb")]
    Rgb,
    #[serde(rename = "sensor.camera.depth")]
    Depth,
    #[serde(rename = "sensor.camera.instance_segmentation")]
    InstanceSegmentation,
}

impl SensorKind {
    pub fn blueprint(self) -> &'static str {
        match self {
            SensorKind::Rgb => "sensor.camera.rgb",
            SensorKind::Depth => "sensor.camera.depth",
            SensorKind::InstanceSegmentation => "sensor.camera.instance_segmentation",
        }
    }

    pub fn from_blueprint(name: &str) -> Option<Self> {
        match name {
            "sensor.camera.rgb" => Some(SensorKind::Rgb),
            "sensor.camera.depth" => Some(SensorKind::Depth),
            "sensor.camera.instance_segmentation" => Some(SensorKind::InstanceSegmentation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    Static,
    Attached { role_name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pitch,
    Yaw,
    Roll,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Pitch => "pitch",
            Axis::Yaw => "yaw",
            Axis::Roll => "roll",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMotion {
    pub destination: Vec3,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMotion {
    pub axis: Axis,
    pub amplitude: f64,
    pub period: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterMotion {
    /// Half-width of the uniform offset per axis, meters.
    pub location_range: Vec3,
    /// Half-width per rotation axis, degrees.
    pub rotation_range: Rotator,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionSpec {
    pub linear: Option<LinearMotion>,
    pub rotation: Option<RotationMotion>,
    pub jitter: Option<JitterMotion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub image_size_x: u32,
    pub image_size_y: u32,
    pub fov: f64,
    /// World pose for static sensors, host-local pose for attached ones.
    pub transform: Transform,
    pub placement: Placement,
    pub motion: Option<MotionSpec>,
}

/// A chroma-key placeholder quad. The quad lies in the local y–z plane of
/// `transform`, facing local +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub name: String,
    pub transform: Transform,
    pub width: f64,
    pub height: f64,
    /// Optional PNG path streamed onto the quad from frame 0.
    pub texture: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub sim: SimSettings,
    pub weather: WeatherConfig,
    pub actors: Vec<ActorSpec>,
    pub sensors: Vec<SensorSpec>,
    pub patches: Vec<PatchSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: ScenarioConfig,
    pub warnings: Vec<Warning>,
}

// ---------------------------------------------------------------------------
// Parsing

struct Reader {
    warnings: Vec<Warning>,
}

fn child(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn type_err(path: &str, expected: &str) -> ConfigError {
    ConfigError::Type {
        path: path.to_string(),
        expected: expected.to_string(),
    }
}

fn constraint(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        path: path.to_string(),
        message: message.into(),
    }
}

/// A mapping being read. Keys that are never looked up are reported as
/// unknown when the view is finished.
struct MapView<'a> {
    map: &'a Mapping,
    path: String,
    seen: Vec<&'static str>,
}

impl<'a> MapView<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Self, ConfigError> {
        match v {
            Value::Mapping(map) => Ok(Self {
                map,
                path: path.to_string(),
                seen: Vec::new(),
            }),
            _ => Err(type_err(path, "mapping")),
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        match self.map.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn require(&mut self, key: &'static str) -> Result<&'a Value, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing {
            path: child(&self.path, key),
        })
    }

    fn path_of(&self, key: &str) -> String {
        child(&self.path, key)
    }

    fn ignore(&mut self, r: &mut Reader, keys: &[&'static str]) {
        for &k in keys {
            self.seen.push(k);
            if self.map.contains_key(k) {
                r.warnings.push(Warning {
                    path: child(&self.path, k),
                    message: "connection setting ignored (simulator runs in-process)".into(),
                });
            }
        }
    }

    fn finish(self, r: &mut Reader) {
        for k in self.map.keys() {
            let name = match k {
                Value::String(s) => s.clone(),
                other => serde_yaml::to_string(other)
                    .unwrap_or_default()
                    .trim()
                    .to_string(),
            };
            if !self.seen.iter().any(|s| *s == name) {
                r.warnings.push(Warning {
                    path: child(&self.path, &name),
                    message: "unknown key ignored".into(),
                });
            }
        }
    }
}

fn as_f64(v: &Value, path: &str) -> Result<f64, ConfigError> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| type_err(path, "number"))?;
    if !x.is_finite() {
        return Err(constraint(path, "value must be finite"));
    }
    Ok(x)
}

fn as_u64(v: &Value, path: &str) -> Result<u64, ConfigError> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse::<u64>().ok(),
        _ => None,
    }
    .ok_or_else(|| type_err(path, "non-negative integer"))
}

fn as_u32(v: &Value, path: &str) -> Result<u32, ConfigError> {
    let x = as_u64(v, path)?;
    u32::try_from(x).map_err(|_| constraint(path, "value too large"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| type_err(path, "string"))
}

fn as_bool(v: &Value, path: &str) -> Result<bool, ConfigError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::String(s) if s.eq_ignore_ascii_case("true") => Ok(true),
        Value::String(s) if s.eq_ignore_ascii_case("false") => Ok(false),
        _ => Err(type_err(path, "boolean")),
    }
}

fn opt_f64(m: &mut MapView, key: &'static str, default: f64) -> Result<f64, ConfigError> {
    match m.get(key) {
        Some(v) => as_f64(v, &m.path_of(key)),
        None => Ok(default),
    }
}

fn positive(x: f64, path: &str) -> Result<f64, ConfigError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(constraint(path, format!("must be > 0 (got {x})")))
    }
}

fn non_negative(x: f64, path: &str) -> Result<f64, ConfigError> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(constraint(path, format!("must be >= 0 (got {x})")))
    }
}

fn in_range(x: f64, lo: f64, hi: f64, path: &str) -> Result<f64, ConfigError> {
    if (lo..=hi).contains(&x) {
        Ok(x)
    } else {
        Err(constraint(path, format!("must lie in [{lo}, {hi}] (got {x})")))
    }
}

impl Reader {
    fn vec3(&mut self, v: &Value, path: &str) -> Result<Vec3, ConfigError> {
        let mut m = MapView::new(v, path)?;
        let out = Vec3::new(
            opt_f64(&mut m, "x", 0.0)?,
            opt_f64(&mut m, "y", 0.0)?,
            opt_f64(&mut m, "z", 0.0)?,
        );
        m.finish(self);
        Ok(out)
    }

    fn rotator(&mut self, v: &Value, path: &str) -> Result<Rotator, ConfigError> {
        let mut m = MapView::new(v, path)?;
        let out = Rotator::new(
            opt_f64(&mut m, "pitch", 0.0)?,
            opt_f64(&mut m, "yaw", 0.0)?,
            opt_f64(&mut m, "roll", 0.0)?,
        );
        m.finish(self);
        Ok(out)
    }

    fn transform(&mut self, v: &Value, path: &str) -> Result<Transform, ConfigError> {
        let mut m = MapView::new(v, path)?;
        let location = match m.get("location") {
            Some(l) => self.vec3(l, &m.path_of("location"))?,
            None => Vec3::ZERO,
        };
        let rotation = match m.get("rotation") {
            Some(r) => self.rotator(r, &m.path_of("rotation"))?,
            None => Rotator::default(),
        };
        m.finish(self);
        Ok(Transform::new(location, rotation.normalized()))
    }

    /// Either a scalar applied to every axis or a per-axis mapping.
    fn per_axis_vec3(&mut self, v: &Value, path: &str) -> Result<Vec3, ConfigError> {
        let r = match v {
            Value::Mapping(_) => self.vec3(v, path)?,
            _ => {
                let s = as_f64(v, path)?;
                Vec3::new(s, s, s)
            }
        };
        for (x, axis) in [(r.x, "x"), (r.y, "y"), (r.z, "z")] {
            non_negative(x, &child(path, axis))?;
        }
        Ok(r)
    }

    fn per_axis_rotator(&mut self, v: &Value, path: &str) -> Result<Rotator, ConfigError> {
        let r = match v {
            Value::Mapping(_) => self.rotator(v, path)?,
            _ => {
                let s = as_f64(v, path)?;
                Rotator::new(s, s, s)
            }
        };
        for (x, axis) in [(r.pitch, "pitch"), (r.yaw, "yaw"), (r.roll, "roll")] {
            non_negative(x, &child(path, axis))?;
        }
        Ok(r)
    }

    fn sim_settings(&mut self, root: &mut MapView) -> Result<SimSettings, ConfigError> {
        let carla_v = root.require("carla")?;
        let mut carla = MapView::new(carla_v, "carla")?;
        carla.ignore(self, &["host", "port", "timeout", "retry", "traffic_manager_port"]);
        let sync_v = carla.require("sync")?;
        let mut sync = MapView::new(sync_v, "carla.sync")?;
        sync.ignore(self, &["timeout"]);
        let fps_path = sync.path_of("fps");
        let fps = as_u32(sync.require("fps")?, &fps_path)?;
        if fps < 1 {
            return Err(constraint(&fps_path, "fps must be >= 1"));
        }
        sync.finish(self);
        let seed = match carla.get("seed") {
            Some(v) => as_u64(v, "carla.seed")?,
            None => 0,
        };
        let townmap = match carla.get("townmap") {
            Some(v) => as_str(v, "carla.townmap")?.to_string(),
            None => DEFAULT_TOWNMAP.to_string(),
        };
        carla.finish(self);

        let output_dir = match root.get("output_dir") {
            Some(v) => as_str(v, "output_dir")?.to_string(),
            None => DEFAULT_OUTPUT_DIR.to_string(),
        };
        let max_frames = as_u32(root.require("max_frames")?, "max_frames")?;
        if max_frames < 1 {
            return Err(constraint("max_frames", "max_frames must be >= 1"));
        }
        Ok(SimSettings {
            seed,
            fps,
            max_frames,
            townmap,
            output_dir,
        })
    }

    fn weather(&mut self, v: &Value) -> Result<WeatherConfig, ConfigError> {
        let mut m = MapView::new(v, "weather")?;
        let d = WeatherConfig::default();
        let pct = |m: &mut MapView, key: &'static str, def: f64, w: &mut Vec<Warning>| {
            let x = opt_f64(m, key, def)?;
            let c = x.clamp(0.0, 100.0);
            if c != x {
                w.push(Warning {
                    path: m.path_of(key),
                    message: format!("{x} clamped to {c}"),
                });
            }
            Ok::<f64, ConfigError>(c)
        };
        let mut w = Vec::new();
        let cloudiness = pct(&mut m, "cloudiness", d.cloudiness, &mut w)?;
        let precipitation = pct(&mut m, "precipitation", d.precipitation, &mut w)?;
        let precipitation_deposits =
            pct(&mut m, "precipitation_deposits", d.precipitation_deposits, &mut w)?;
        let wind_intensity = pct(&mut m, "wind_intensity", d.wind_intensity, &mut w)?;
        let fog_density = pct(&mut m, "fog_density", d.fog_density, &mut w)?;
        let wetness = pct(&mut m, "wetness", d.wetness, &mut w)?;
        let sun_azimuth_angle = in_range(
            opt_f64(&mut m, "sun_azimuth_angle", d.sun_azimuth_angle)?,
            -360.0,
            360.0,
            "weather.sun_azimuth_angle",
        )?;
        let sun_altitude_angle = in_range(
            opt_f64(&mut m, "sun_altitude_angle", d.sun_altitude_angle)?,
            -90.0,
            90.0,
            "weather.sun_altitude_angle",
        )?;
        let fog_distance = non_negative(
            opt_f64(&mut m, "fog_distance", d.fog_distance)?,
            "weather.fog_distance",
        )?;
        self.warnings.extend(w);
        m.finish(self);
        Ok(WeatherConfig {
            cloudiness,
            precipitation,
            precipitation_deposits,
            wind_intensity,
            sun_azimuth_angle,
            sun_altitude_angle,
            fog_density,
            fog_distance,
            wetness,
        })
    }

    fn walker(
        &mut self,
        entry: &mut MapView,
        bp: &mut MapView,
        name: &str,
    ) -> Result<ActorSpec, ConfigError> {
        let mut role_name = String::new();
        let mut is_invincible = false;
        if let Some(a) = bp.get("attr") {
            let mut attr = MapView::new(a, &bp.path_of("attr"))?;
            if let Some(v) = attr.get("role_name") {
                role_name = as_str(v, &attr.path_of("role_name"))?.to_string();
            }
            if let Some(v) = attr.get("is_invincible") {
                is_invincible = as_bool(v, &attr.path_of("is_invincible"))?;
            }
            attr.finish(self);
        }
        let speed_path = bp.path_of("speed");
        let speed = positive(opt_f64(bp, "speed", DEFAULT_WALKER_SPEED)?, &speed_path)?;
        let spawn = self.transform(entry.require("transform")?, &entry.path_of("transform"))?;
        let destination = match entry.get("destination_transform") {
            Some(v) => Some(self.transform(v, &entry.path_of("destination_transform"))?),
            None => None,
        };
        Ok(ActorSpec {
            blueprint: name.to_string(),
            role_name,
            speed,
            spawn,
            destination,
            is_invincible,
        })
    }

    fn sensor(
        &mut self,
        entry: &mut MapView,
        bp: &mut MapView,
        kind: SensorKind,
    ) -> Result<SensorSpec, ConfigError> {
        let mut w = 800u32;
        let mut h = 600u32;
        let mut fov = DEFAULT_FOV;
        if let Some(a) = bp.get("attr") {
            let mut attr = MapView::new(a, &bp.path_of("attr"))?;
            if let Some(v) = attr.get("image_size_x") {
                w = as_u32(v, &attr.path_of("image_size_x"))?;
            }
            if let Some(v) = attr.get("image_size_y") {
                h = as_u32(v, &attr.path_of("image_size_y"))?;
            }
            if let Some(v) = attr.get("fov") {
                fov = as_f64(v, &attr.path_of("fov"))?;
            }
            attr.ignore(self, &["role_name"]);
            attr.finish(self);
        }
        let attr_path = bp.path_of("attr");
        if w < 8 {
            return Err(constraint(&child(&attr_path, "image_size_x"), "must be >= 8"));
        }
        if h < 8 {
            return Err(constraint(&child(&attr_path, "image_size_y"), "must be >= 8"));
        }
        if !(fov > 0.0 && fov < 180.0) {
            return Err(constraint(&child(&attr_path, "fov"), "must lie in (0, 180)"));
        }
        if fov > DEGENERATE_FOV {
            self.warnings.push(Warning {
                path: child(&attr_path, "fov"),
                message: format!("field of view {fov} is degenerate"),
            });
        }
        let transform = self.transform(entry.require("transform")?, &entry.path_of("transform"))?;
        let placement = match entry.get("attach_to") {
            Some(v) => Placement::Attached {
                role_name: as_str(v, &entry.path_of("attach_to"))?.to_string(),
            },
            None => Placement::Static,
        };
        let motion = match entry.get("motion") {
            Some(v) => Some(self.motion(v, &entry.path_of("motion"))?),
            None => None,
        };
        Ok(SensorSpec {
            kind,
            image_size_x: w,
            image_size_y: h,
            fov,
            transform,
            placement,
            motion,
        })
    }

    fn motion(&mut self, v: &Value, path: &str) -> Result<MotionSpec, ConfigError> {
        let mut m = MapView::new(v, path)?;
        let linear = match m.get("linear") {
            Some(lv) => {
                let lp = m.path_of("linear");
                let mut l = MapView::new(lv, &lp)?;
                let destination = self
                    .transform(l.require("destination")?, &l.path_of("destination"))?
                    .location;
                let sp = l.path_of("speed");
                let speed = positive(as_f64(l.require("speed")?, &sp)?, &sp)?;
                l.finish(self);
                Some(LinearMotion { destination, speed })
            }
            None => None,
        };
        let rotation = match m.get("rotation") {
            Some(rv) => {
                let rp = m.path_of("rotation");
                let mut r = MapView::new(rv, &rp)?;
                let ap = r.path_of("axis");
                let axis = match as_str(r.require("axis")?, &ap)? {
                    "pitch" => Axis::Pitch,
                    "yaw" => Axis::Yaw,
                    "roll" => Axis::Roll,
                    _ => return Err(type_err(&ap, "one of pitch, yaw, roll")),
                };
                let amp_p = r.path_of("amplitude");
                let amplitude = non_negative(as_f64(r.require("amplitude")?, &amp_p)?, &amp_p)?;
                let per_p = r.path_of("period");
                let period = as_u32(r.require("period")?, &per_p)?;
                if period < 1 {
                    return Err(constraint(&per_p, "period must be >= 1 frame"));
                }
                r.finish(self);
                Some(RotationMotion {
                    axis,
                    amplitude,
                    period,
                })
            }
            None => None,
        };
        let jitter = match m.get("jitter") {
            Some(jv) => {
                let jp = m.path_of("jitter");
                let mut j = MapView::new(jv, &jp)?;
                let location_range = match j.get("location_range") {
                    Some(v) => self.per_axis_vec3(v, &j.path_of("location_range"))?,
                    None => Vec3::ZERO,
                };
                let rotation_range = match j.get("rotation_range") {
                    Some(v) => self.per_axis_rotator(v, &j.path_of("rotation_range"))?,
                    None => Rotator::default(),
                };
                j.finish(self);
                Some(JitterMotion {
                    location_range,
                    rotation_range,
                })
            }
            None => None,
        };
        m.finish(self);
        if linear.is_none() && rotation.is_none() && jitter.is_none() {
            return Err(constraint(path, "needs at least one of linear, rotation, jitter"));
        }
        Ok(MotionSpec {
            linear,
            rotation,
            jitter,
        })
    }

    fn patch(&mut self, v: &Value, path: &str, index: usize) -> Result<PatchSpec, ConfigError> {
        let mut m = MapView::new(v, path)?;
        let name = match m.get("name") {
            Some(n) => as_str(n, &m.path_of("name"))?.to_string(),
            None => format!("patch{index}"),
        };
        let transform = self.transform(m.require("transform")?, &m.path_of("transform"))?;
        let size_path = m.path_of("size");
        let mut size = MapView::new(m.require("size")?, &size_path)?;
        let wp = size.path_of("width");
        let width = positive(as_f64(size.require("width")?, &wp)?, &wp)?;
        let hp = size.path_of("height");
        let height = positive(as_f64(size.require("height")?, &hp)?, &hp)?;
        size.finish(self);
        let texture = match m.get("texture") {
            Some(t) => Some(as_str(t, &m.path_of("texture"))?.to_string()),
            None => None,
        };
        m.finish(self);
        Ok(PatchSpec {
            name,
            transform,
            width,
            height,
            texture,
        })
    }
}

/// Parses a scenario file into a fully-defaulted [`ScenarioConfig`].
pub fn parse_scenario(yaml_text: &str) -> Result<Parsed, ConfigError> {
    let root_v: Value = serde_yaml::from_str(yaml_text).map_err(|e| {
        let (line, column) = e
            .location()
            .map(|l| (l.line(), l.column()))
            .unwrap_or((0, 0));
        ConfigError::Syntax {
            line,
            column,
            message: e.to_string(),
        }
    })?;
    let mut r = Reader {
        warnings: Vec::new(),
    };
    let mut root = MapView::new(&root_v, "")?;
    let sim = r.sim_settings(&mut root)?;
    let weather = match root.get("weather") {
        Some(v) => r.weather(v)?,
        None => WeatherConfig::default(),
    };

    let mut actors = Vec::new();
    let mut sensors = Vec::new();
    if let Some(list) = root.get("spawn_actors") {
        let items = list
            .as_sequence()
            .ok_or_else(|| type_err("spawn_actors", "sequence"))?;
        for (i, item) in items.iter().enumerate() {
            let path = format!("spawn_actors[{i}]");
            let mut entry = MapView::new(item, &path)?;
            let bp_path = entry.path_of("blueprint");
            let mut bp = MapView::new(entry.require("blueprint")?, &bp_path)?;
            let name_path = bp.path_of("name");
            let name = as_str(bp.require("name")?, &name_path)?.to_string();
            if name.starts_with("walker.") {
                actors.push(r.walker(&mut entry, &mut bp, &name)?);
            } else if let Some(kind) = SensorKind::from_blueprint(&name) {
                sensors.push(r.sensor(&mut entry, &mut bp, kind)?);
            } else {
                return Err(constraint(
                    &name_path,
                    format!("unsupported blueprint `{name}`"),
                ));
            }
            bp.finish(&mut r);
            entry.finish(&mut r);
        }
    }

    let mut patches = Vec::new();
    if let Some(list) = root.get("patches") {
        let items = list
            .as_sequence()
            .ok_or_else(|| type_err("patches", "sequence"))?;
        for (i, item) in items.iter().enumerate() {
            patches.push(r.patch(item, &format!("patches[{i}]"), i)?);
        }
    }
    root.finish(&mut r);

    Ok(Parsed {
        config: ScenarioConfig {
            sim,
            weather,
            actors,
            sensors,
            patches,
        },
        warnings: r.warnings,
    })
}

// ---------------------------------------------------------------------------
// Validation

/// Cross-field checks. An empty list means the config is usable.
pub fn validate(config: &ScenarioConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if layouts::layout_by_name(&config.sim.townmap).is_none() {
        out.push(Diagnostic {
            path: "carla.townmap".into(),
            message: format!(
                "unknown townmap `{}` (available: {})",
                config.sim.townmap,
                layouts::LAYOUT_NAMES.join(", ")
            ),
        });
    }
    for (i, a) in config.actors.iter().enumerate() {
        if let Some(d) = &a.destination {
            if d.location == a.spawn.location {
                out.push(Diagnostic {
                    path: format!("actors[{i}].destination_transform"),
                    message: "destination equals spawn location".into(),
                });
            }
        }
        if !a.role_name.is_empty()
            && config.actors[..i].iter().any(|b| b.role_name == a.role_name)
        {
            out.push(Diagnostic {
                path: format!("actors[{i}].role_name"),
                message: format!("duplicate role_name `{}`", a.role_name),
            });
        }
    }
    for (i, s) in config.sensors.iter().enumerate() {
        if let Placement::Attached { role_name } = &s.placement {
            if !config.actors.iter().any(|a| &a.role_name == role_name) {
                out.push(Diagnostic {
                    path: format!("sensors[{i}].attach_to"),
                    message: format!("no actor with role_name `{role_name}`"),
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Serialization

fn map(entries: Vec<(&str, Value)>) -> Value {
    let mut m = Mapping::new();
    for (k, v) in entries {
        m.insert(Value::String(k.to_string()), v);
    }
    Value::Mapping(m)
}

fn num(x: f64) -> Value {
    Value::Number(x.into())
}

fn int(x: u64) -> Value {
    Value::Number(x.into())
}

fn vec3_value(v: Vec3) -> Value {
    map(vec![("x", num(v.x)), ("y", num(v.y)), ("z", num(v.z))])
}

fn rotator_value(r: Rotator) -> Value {
    map(vec![
        ("pitch", num(r.pitch)),
        ("yaw", num(r.yaw)),
        ("roll", num(r.roll)),
    ])
}

fn transform_value(t: &Transform) -> Value {
    map(vec![
        ("location", vec3_value(t.location)),
        ("rotation", rotator_value(t.rotation)),
    ])
}

/// Writes `config` back out in the input schema, every default explicit.
pub fn to_yaml(config: &ScenarioConfig) -> String {
    serde_yaml::to_string(&to_value(config)).expect("config values serialize")
}

pub fn to_value(config: &ScenarioConfig) -> Value {
    let s = &config.sim;
    let w = &config.weather;
    let mut spawn = Vec::new();
    for a in &config.actors {
        let mut entry = vec![
            (
                "blueprint",
                map(vec![
                    ("name", Value::String(a.blueprint.clone())),
                    (
                        "attr",
                        map(vec![
                            ("role_name", Value::String(a.role_name.clone())),
                            ("is_invincible", Value::Bool(a.is_invincible)),
                        ]),
                    ),
                    ("speed", num(a.speed)),
                ]),
            ),
            ("transform", transform_value(&a.spawn)),
        ];
        if let Some(d) = &a.destination {
            entry.push(("destination_transform", transform_value(d)));
        }
        spawn.push(map(entry));
    }
    for sn in &config.sensors {
        let mut entry = vec![
            (
                "blueprint",
                map(vec![
                    ("name", Value::String(sn.kind.blueprint().to_string())),
                    (
                        "attr",
                        map(vec![
                            ("image_size_x", int(u64::from(sn.image_size_x))),
                            ("image_size_y", int(u64::from(sn.image_size_y))),
                            ("fov", num(sn.fov)),
                        ]),
                    ),
                ]),
            ),
            ("transform", transform_value(&sn.transform)),
        ];
        if let Placement::Attached { role_name } = &sn.placement {
            entry.push(("attach_to", Value::String(role_name.clone())));
        }
        if let Some(m) = &sn.motion {
            let mut mv = Vec::new();
            if let Some(l) = &m.linear {
                mv.push((
                    "linear",
                    map(vec![
                        ("destination", map(vec![("location", vec3_value(l.destination))])),
                        ("speed", num(l.speed)),
                    ]),
                ));
            }
            if let Some(r) = &m.rotation {
                mv.push((
                    "rotation",
                    map(vec![
                        ("axis", Value::String(r.axis.name().to_string())),
                        ("amplitude", num(r.amplitude)),
                        ("period", int(u64::from(r.period))),
                    ]),
                ));
            }
            if let Some(j) = &m.jitter {
                mv.push((
                    "jitter",
                    map(vec![
                        ("location_range", vec3_value(j.location_range)),
                        ("rotation_range", rotator_value(j.rotation_range)),
                    ]),
                ));
            }
            entry.push(("motion", map(mv)));
        }
        spawn.push(map(entry));
    }
    let patches: Vec<Value> = config
        .patches
        .iter()
        .map(|p| {
            let mut e = vec![
                ("name", Value::String(p.name.clone())),
                ("transform", transform_value(&p.transform)),
                (
                    "size",
                    map(vec![("width", num(p.width)), ("height", num(p.height))]),
                ),
            ];
            if let Some(t) = &p.texture {
                e.push(("texture", Value::String(t.clone())));
            }
            map(e)
        })
        .collect();

    let mut root = vec![
        (
            "carla",
            map(vec![
                ("sync", map(vec![("fps", int(u64::from(s.fps)))])),
                ("seed", int(s.seed)),
                ("townmap", Value::String(s.townmap.clone())),
            ]),
        ),
        ("output_dir", Value::String(s.output_dir.clone())),
        ("max_frames", int(u64::from(s.max_frames))),
        (
            "weather",
            map(vec![
                ("cloudiness", num(w.cloudiness)),
                ("precipitation", num(w.precipitation)),
                ("precipitation_deposits", num(w.precipitation_deposits)),
                ("wind_intensity", num(w.wind_intensity)),
                ("sun_azimuth_angle", num(w.sun_azimuth_angle)),
                ("sun_altitude_angle", num(w.sun_altitude_angle)),
                ("fog_density", num(w.fog_density)),
                ("fog_distance", num(w.fog_distance)),
                ("wetness", num(w.wetness)),
            ]),
        ),
        ("spawn_actors", Value::Sequence(spawn)),
    ];
    if !patches.is_empty() {
        root.push(("patches", Value::Sequence(patches)));
    }
    map(root)
}

/// The two-walker, three-camera scenario with sunny weather.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/two_walkers.yaml");
