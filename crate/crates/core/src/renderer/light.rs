//! Weather → lighting model.
//!
//! Every coefficient that maps a weather value to pixels lives in this file.

use crate::config::WeatherConfig;
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

/// Peak sun contribution under a clear sky.
pub const SUN_DIFFUSE_MAX: f64 = 0.7;
/// Fraction of direct sun removed at 100% cloudiness.
pub const CLOUD_DIFFUSE_LOSS: f64 = 0.6;
pub const AMBIENT_BASE: f64 = 0.25;
/// Extra sky radiation at 100% cloudiness.
pub const AMBIENT_CLOUD_GAIN: f64 = 0.15;
/// Fog extinction coefficient (1/m) at fog_density 100.
pub const FOG_BETA_MAX: f64 = 0.03;
/// Ground albedo darkening at wetness 100.
pub const WETNESS_DARKENING: f64 = 0.4;
pub const LIGHT_HEADROOM: f64 = 1.2;

pub const FOG_CLEAR: [f64; 3] = [200.0, 200.0, 200.0];
pub const FOG_OVERCAST: [f64; 3] = [96.0, 96.0, 96.0];
pub const SKY_CLEAR: [f64; 3] = [118.0, 168.0, 228.0];
pub const SKY_OVERCAST: [f64; 3] = [160.0, 162.0, 166.0];
pub const RAIN_COLOR: [f64; 3] = [214.0, 218.0, 224.0];
/// Peak opacity of a rain streak.
pub const RAIN_OPACITY: f64 = 0.35;
/// Streaks per 100x100 tile per unit of precipitation percent.
pub const RAIN_STREAKS_PER_PERCENT: f64 = 3.0;

/// Offset along the sun direction before casting a shadow ray (meters).
pub const SHADOW_EPSILON: f64 = 1e-3;
/// Planar depth assigned to pixels not covered by geometry (meters).
pub const FAR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightModel {
    /// Unit vector pointing toward the sun.
    pub sun_dir: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
    pub fog_color: [f64; 3],
    pub fog_beta: f64,
    pub fog_start: f64,
    pub sky_color: [f64; 3],
    /// Multiplier applied to ground-class albedo.
    pub ground_albedo_scale: f64,
    pub precipitation: f64,
}

fn mix3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

impl LightModel {
    /// Flat ambient lighting only: no sun, fog or rain.
    pub fn ambient_only(ambient: f64) -> Self {
        Self {
            sun_dir: Vec3::new(0.0, 0.0, 1.0),
            ambient,
            diffuse: 0.0,
            fog_color: FOG_CLEAR,
            fog_beta: 0.0,
            fog_start: 0.0,
            sky_color: SKY_CLEAR,
            ground_albedo_scale: 1.0,
            precipitation: 0.0,
        }
    }

    /// Fog blend weight toward `fog_color` at planar depth `depth`.
    pub fn fog_weight(&self, depth: f64) -> f64 {
        if self.fog_beta == 0.0 {
            return 0.0;
        }
        1.0 - (-self.fog_beta * (depth - self.fog_start).max(0.0)).exp()
    }

    /// Whether rendering with this model leaves albedo unchanged
    /// (unit gain, no fog, no rain).
    pub fn is_identity(&self) -> bool {
        self.ambient == 1.0 && self.diffuse == 0.0 && self.fog_beta == 0.0 && self.precipitation == 0.0
    }
}

pub fn derive_light_model(w: &WeatherConfig) -> LightModel {
    let alt = w.sun_altitude_angle.to_radians();
    let az = w.sun_azimuth_angle.to_radians();
    let sun_dir = Vec3::new(alt.cos() * az.cos(), alt.cos() * az.sin(), alt.sin());
    let cloud = w.cloudiness / 100.0;
    let mut diffuse = SUN_DIFFUSE_MAX * alt.sin().max(0.0) * (1.0 - CLOUD_DIFFUSE_LOSS * cloud);
    if w.sun_altitude_angle <= 0.0 {
        diffuse = 0.0;
    }
    let mut ambient = AMBIENT_BASE + AMBIENT_CLOUD_GAIN * cloud;
    let total = ambient + diffuse;
    if total > LIGHT_HEADROOM {
        let s = LIGHT_HEADROOM / total;
        ambient *= s;
        diffuse *= s;
    }
    LightModel {
        sun_dir,
        ambient,
        diffuse,
        fog_color: mix3(FOG_CLEAR, FOG_OVERCAST, cloud),
        fog_beta: FOG_BETA_MAX * w.fog_density / 100.0,
        fog_start: w.fog_distance,
        sky_color: mix3(SKY_CLEAR, SKY_OVERCAST, cloud),
        ground_albedo_scale: 1.0 - WETNESS_DARKENING * w.wetness / 100.0,
        precipitation: w.precipitation,
    }
}
