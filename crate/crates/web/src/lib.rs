//! Browser bindings: weather renders, patch-method comparison and a
//! static-versus-jitter background ablation, all on the reference street.

use image::RgbImage;
use patchsim::config::{JitterMotion, MotionSpec, PatchSpec, ScenarioConfig, WeatherConfig};
use patchsim::config::{parse_scenario, REFERENCE_SCENARIO};
use patchsim::defense::{ablate, build_background, fraction_within};
use patchsim::geometry::{Rotator, Transform, Vec3};
use patchsim::patcher::{
    composite_color_corrected, composite_digital, estimate_from_frame, locate_placeholder, mean_abs_diff,
    render_streamed, PatchMethod,
};
use patchsim::renderer::light::FAR;
use patchsim::renderer::{derive_light_model, render, FrameBundle};
use patchsim::rng::SplitMix64;
use patchsim::run::{apply_overrides, GenerateOptions, Simulation};
use patchsim::scene::layouts::STREET_WALL_FRONT_X;
use patchsim::scene::{classes, PlaceholderId, Scene};
use patchsim::sensor_rig::Camera;
use wasm_bindgen::prelude::*;

const PATCH: PlaceholderId = PlaceholderId(0);

pub fn weather(name: &str) -> Result<WeatherConfig, String> {
    match name {
        "sunny" => Ok(WeatherConfig::sunny()),
        "rainy" => Ok(WeatherConfig::rainy()),
        "foggy" => Ok(WeatherConfig::foggy()),
        other => Err(format!("unknown weather `{other}`")),
    }
}

/// Reference scenario at `width`x`height` with a 1.5 m placeholder on the
/// wall facing the sensors.
pub fn scenario(width: u32, height: u32, jitter: bool) -> ScenarioConfig {
    let mut cfg = parse_scenario(REFERENCE_SCENARIO).expect("built-in scenario parses").config;
    cfg.patches.push(PatchSpec {
        name: "wall".into(),
        transform: Transform::new(
            Vec3::new(STREET_WALL_FRONT_X - 0.02, 160.0, 1.6),
            Rotator::new(0.0, 180.0, 0.0),
        ),
        width: 1.5,
        height: 1.5,
        texture: None,
    });
    if jitter {
        for s in &mut cfg.sensors {
            s.motion = Some(MotionSpec {
                linear: None,
                rotation: None,
                jitter: Some(JitterMotion {
                    location_range: Vec3::new(0.05, 0.05, 0.05),
                    rotation_range: Rotator::new(1.0, 1.0, 1.0),
                }),
            });
        }
    }
    let opts = GenerateOptions {
        image_size: Some((width, height)),
        ..Default::default()
    };
    apply_overrides(&cfg, &opts)
}

/// Colorful noise standing in for an adversarial texture.
pub fn noise_patch(size: u32) -> RgbImage {
    let mut rng = SplitMix64::stream(7, "demo-patch");
    RgbImage::from_fn(size, size, |_, _| {
        image::Rgb([rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8])
    })
}

/// Scene and first-sensor camera for output frame `frame`.
pub fn frame_state(cfg: &ScenarioConfig, frame: u32) -> Result<(Scene, Camera), String> {
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    let mut state = None;
    for _ in 0..=frame {
        state = Some(sim.advance().map_err(|e| e.to_string())?);
    }
    let (scene, cams) = state.expect("at least one step");
    Ok((scene, cams[0]))
}

fn rain(scene: &Scene) -> SplitMix64 {
    scene.stream(&format!("rain/{}", scene.frame_index))
}

pub fn render_frame(cfg: &ScenarioConfig, frame: u32) -> Result<FrameBundle, String> {
    let (scene, cam) = frame_state(cfg, frame)?;
    Ok(render(&scene, &cam, &derive_light_model(&cfg.weather), rain(&scene)))
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect()
}

/// Near is bright, sky is black; log scale.
pub fn depth_rgba(depth: &[f64]) -> Vec<u8> {
    let top = (1.0 + FAR).ln();
    depth
        .iter()
        .flat_map(|&d| {
            let v = if d >= FAR { 0 } else { (255.0 * (1.0 - (1.0 + d).ln() / top)).round() as u8 };
            [v, v, v, 255]
        })
        .collect()
}

pub fn instance_rgba(b: &FrameBundle) -> Vec<u8> {
    b.instance
        .data
        .iter()
        .flat_map(|p| {
            if p.instance_id == 0 {
                return [0, 0, 0, 255];
            }
            let h = SplitMix64::from_state(u64::from(p.semantic_class) << 16 | u64::from(p.instance_id)).next_u64();
            [h as u8 | 64, (h >> 8) as u8 | 64, (h >> 16) as u8 | 64, 255]
        })
        .collect()
}

pub struct PatchView {
    pub rgb: RgbImage,
    /// Mean per-channel distance to the rendered patch over the visible patch.
    pub distance: f64,
}

pub fn patch_view(cfg: &ScenarioConfig, frame: u32, method: PatchMethod) -> Result<PatchView, String> {
    let (scene, cam) = frame_state(cfg, frame)?;
    let light = derive_light_model(&cfg.weather);
    let texture = noise_patch(32);
    let base = render(&scene, &cam, &light, rain(&scene));
    let pl = locate_placeholder(&base, &scene, PATCH).map_err(|e| e.to_string())?;
    let rendered = render_streamed(&scene, PATCH, &texture, &cam, &light, rain(&scene)).map_err(|e| e.to_string())?;
    let rgb = match method {
        PatchMethod::Digital => composite_digital(&base.rgb, &texture, &pl),
        PatchMethod::Corrected => {
            let t = estimate_from_frame(&base, &scene, &pl).map_err(|e| e.to_string())?;
            composite_color_corrected(&base.rgb, &texture, &pl, &t)
        }
        PatchMethod::Rendered => rendered.rgb.clone(),
    };
    let region: Vec<bool> = pl
        .mask(rgb.width(), rgb.height())
        .into_iter()
        .zip(rendered.instance.mask_of_class(classes::PATCH))
        .map(|(a, b)| a && b)
        .collect();
    let distance = mean_abs_diff(&rgb, &rendered.rgb, &region);
    Ok(PatchView { rgb, distance })
}

pub struct AblationView {
    pub ablated: RgbImage,
    pub removal_rate: f64,
}

/// Background from `window` frames spread over the first `span` frames,
/// then ablation of the last frame.
pub fn ablation_view(cfg: &ScenarioConfig, window: u32, span: u32) -> Result<AblationView, String> {
    let texture = noise_patch(48);
    let light = derive_light_model(&cfg.weather);
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    let picks: Vec<u32> = (0..window).map(|i| i * (span - 1) / (window - 1).max(1)).collect();
    let mut frames = Vec::new();
    let mut last = None;
    for f in 0..span {
        let (mut scene, cams) = sim.advance().map_err(|e| e.to_string())?;
        if !picks.contains(&f) {
            continue;
        }
        scene.set_patch_texture(PATCH, texture.clone()).map_err(|e| e.to_string())?;
        let b = render(&scene, &cams[0], &light, rain(&scene));
        frames.push(b.rgb.clone());
        last = Some(b);
    }
    let last = last.ok_or("empty window")?;
    let model = build_background(&frames).map_err(|e| e.to_string())?;
    let (ablated, mask) = ablate(&last.rgb, &model).map_err(|e| e.to_string())?;
    let gt = last.instance.mask_of_class(classes::PATCH);
    Ok(AblationView {
        ablated,
        removal_rate: fraction_within(&mask, &gt),
    })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// One demo scene at a fixed resolution.
#[wasm_bindgen]
pub struct Demo {
    width: u32,
    height: u32,
    distance: f64,
    removal_rate: f64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(width: u32, height: u32) -> Demo {
        Demo {
            width,
            height,
            distance: f64::NAN,
            removal_rate: f64::NAN,
        }
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// RGBA pixels of `layer` ("rgb", "depth" or "instance") at `frame`.
    pub fn render(&self, frame: u32, weather_name: &str, layer: &str) -> Result<Vec<u8>, JsError> {
        let mut cfg = scenario(self.width, self.height, false);
        cfg.weather = weather(weather_name).map_err(js)?;
        let b = render_frame(&cfg, frame).map_err(js)?;
        match layer {
            "rgb" => Ok(rgba(&b.rgb)),
            "depth" => Ok(depth_rgba(&b.depth)),
            "instance" => Ok(instance_rgba(&b)),
            other => Err(JsError::new(&format!("unknown layer `{other}`"))),
        }
    }

    /// RGBA frame with the patch inserted by `method`. Sets `distance`.
    pub fn patch(&mut self, frame: u32, weather_name: &str, method: &str) -> Result<Vec<u8>, JsError> {
        let mut cfg = scenario(self.width, self.height, false);
        cfg.weather = weather(weather_name).map_err(js)?;
        let method: PatchMethod = method.parse().map_err(js)?;
        let v = patch_view(&cfg, frame, method).map_err(js)?;
        self.distance = v.distance;
        Ok(rgba(&v.rgb))
    }

    /// Distance to the rendered patch from the last `patch` call, in 0..255.
    #[wasm_bindgen(getter)]
    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// RGBA of the ablated last frame. Sets `removal_rate`.
    pub fn ablate(&mut self, jitter: bool, window: u32) -> Result<Vec<u8>, JsError> {
        let cfg = scenario(self.width, self.height, jitter);
        let v = ablation_view(&cfg, window.max(3), 90).map_err(js)?;
        self.removal_rate = v.removal_rate;
        Ok(rgba(&v.ablated))
    }

    #[wasm_bindgen(getter)]
    pub fn removal_rate(&self) -> f64 {
        self.removal_rate
    }
}
