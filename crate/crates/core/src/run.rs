//! Run orchestration: generate, annotate, patch and evaluate a scenario
//! with a fixed on-disk layout and a hashed manifest.
//!
//! ```text
//! <run>/manifest.json
//! <run>/<i>_<blueprint>/frame_000000.png           native modality
//! <run>/<i>_<blueprint>/frame_000000_instance.png  rgb and depth sensors
//! <run>/<i>_<blueprint>/frame_000000_depth_mm.png  depth sensors
//! <run>/annotations/kwcoco.json
//! <run>/annotations/mots/instances/<sensor dir>/000000.png
//! <run>/annotations/mots/instances_txt/<sensor dir>.txt
//! ```
//!
//! Output frame `k` shows the world after `k + 1` simulation ticks.

use crate::annotator::{detections_for_frame, kwcoco, mots, Detection, DEFAULT_MIN_PIXELS};
use crate::config::{self, ConfigError, Diagnostic, ScenarioConfig, SensorKind, WeatherConfig, Warning};
use crate::defense::{
    self, ablate_with_tolerance, build_background, DefenseError, MaskParams, OverlapCounts, SceneStats,
    DEFAULT_TOLERANCE, MASK_NAMES,
};
use crate::par_map;
use crate::patcher::{
    composite_color_corrected, composite_digital, estimate_in, locate_in, PatchError, PatchMethod,
};
use crate::renderer::codec::decode_instance_png;
use crate::renderer::{derive_light_model, render, render_geometry, FrameBundle, InstancePlane, LightModel};
use crate::scene::{build_scene, classes, AssetLibrary, PlaceholderId, Scene, SceneError};
use crate::sensor_rig::{intrinsics, Camera, CameraIntrinsics, RigError, SensorTrack};
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{EncodableLayout, ImageBuffer, ImageFormat, PixelWithColorType, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable naming the root for relative `output_dir` values.
pub const OUT_ROOT_ENV: &str = "PATCHSIM_OUT_ROOT";
pub const TOOL_NAME: &str = "patchsim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const BATCH_FRAMES: u64 = 16;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scenario:\n{}", list(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: not a run directory ({message})")]
    NotARun { path: PathBuf, message: String },
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Mots(#[from] mots::MotsError),
}

fn list(d: &[Diagnostic]) -> String {
    d.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl RunError {
    /// 2 for configuration and usage problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigFile { .. }
            | RunError::Config(_)
            | RunError::Invalid(_)
            | RunError::Scene(_)
            | RunError::Rig(_)
            | RunError::Usage(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn encode_png<P>(img: &ImageBuffer<P, Vec<P::Subpixel>>) -> Vec<u8>
where
    P: PixelWithColorType,
    [P::Subpixel]: EncodableLayout,
{
    let mut buf = Vec::new();
    let enc = PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Sub);
    img.write_with_encoder(enc).expect("in-memory PNG encoding");
    buf
}

fn read_png(path: &Path) -> Result<image::DynamicImage, RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| RunError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, RunError> {
    match read_png(path)? {
        image::DynamicImage::ImageRgb8(i) => Ok(i),
        other => Err(RunError::Image {
            path: path.to_path_buf(),
            message: format!("expected 8-bit RGB, found {:?}", other.color()),
        }),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Reads and parses a scenario file.
pub fn load_config(path: &Path) -> Result<(ScenarioConfig, Vec<Warning>), RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::ConfigFile {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = config::parse_scenario(&text)?;
    Ok((parsed.config, parsed.warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub warnings: Vec<Warning>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

pub fn validate_config(path: &Path) -> Result<Validation, RunError> {
    let (cfg, warnings) = load_config(path)?;
    Ok(Validation {
        warnings,
        diagnostics: config::validate(&cfg),
    })
}

/// An explicit directory wins; otherwise `config_output_dir` is taken
/// relative to `env_root` (or the working directory).
pub fn resolve_output_dir(explicit: Option<&Path>, config_output_dir: &str, env_root: Option<PathBuf>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => env_root.unwrap_or_else(|| PathBuf::from(".")).join(config_output_dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorOutput {
    pub index: usize,
    pub blueprint: String,
    pub kind: SensorKind,
    pub dir: String,
    pub width: u32,
    pub height: u32,
}

impl SensorOutput {
    pub fn frame_path(&self, f: u64) -> String {
        kwcoco::frame_file_name(&self.dir, f)
    }

    pub fn instance_path(&self, f: u64) -> String {
        match self.kind {
            SensorKind::InstanceSegmentation => self.frame_path(f),
            _ => format!("{}/frame_{f:06}_instance.png", self.dir),
        }
    }

    pub fn depth_mm_path(&self, f: u64) -> String {
        format!("{}/frame_{f:06}_depth_mm.png", self.dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub method: PatchMethod,
    pub placeholder: usize,
    pub texture_sha256: String,
    /// Run whose depth and instance files this run reuses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_run: Option<String>,
    pub frames_patched: u64,
    pub frames_not_visible: u64,
    pub frames_uncorrected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub num_frames: u64,
    pub fps: u32,
    pub weather: WeatherConfig,
    /// Lighting derived from `weather`.
    pub light: LightModel,
    pub config: ScenarioConfig,
    pub sensors: Vec<SensorOutput>,
    /// Relative path → SHA-256 of every file this run wrote.
    pub files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchRecord>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Patch texture: one image, or a `frame_NNNNNN.png` sequence where each
/// image holds until the next one.
#[derive(Debug, Clone)]
pub enum TextureSource {
    Still(RgbImage),
    Sequence(Vec<(u64, RgbImage)>),
}

impl TextureSource {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        if !path.is_dir() {
            return Ok(TextureSource::Still(read_rgb(path)?));
        }
        let mut frames = Vec::new();
        for entry in fs::read_dir(path).map_err(io_err(path))? {
            let entry = entry.map_err(io_err(path))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let idx = name
                .strip_prefix("frame_")
                .and_then(|s| s.strip_suffix(".png"))
                .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|s| s.parse::<u64>().ok());
            if let Some(i) = idx {
                frames.push((i, read_rgb(&entry.path())?));
            }
        }
        if frames.is_empty() {
            return Err(RunError::Usage(format!(
                "{}: no frame_NNNNNN.png textures found",
                path.display()
            )));
        }
        frames.sort_by_key(|(i, _)| *i);
        Ok(TextureSource::Sequence(frames))
    }

    pub fn frame(&self, f: u64) -> &RgbImage {
        match self {
            TextureSource::Still(img) => img,
            TextureSource::Sequence(seq) => {
                let k = seq.partition_point(|(i, _)| *i <= f);
                &seq[k.saturating_sub(1)].1
            }
        }
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |i: u64, img: &RgbImage| {
            h.update(i.to_le_bytes());
            h.update(img.width().to_le_bytes());
            h.update(img.height().to_le_bytes());
            h.update(img.as_raw());
        };
        match self {
            TextureSource::Still(img) => feed(0, img),
            TextureSource::Sequence(seq) => seq.iter().for_each(|(i, img)| feed(*i, img)),
        }
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub seed: Option<u64>,
    pub max_frames: Option<u32>,
    /// Overrides every sensor's image size.
    pub image_size: Option<(u32, u32)>,
    pub weather: Option<WeatherConfig>,
    /// Base for relative texture paths in the config.
    pub base_dir: Option<PathBuf>,
    pub textures: Vec<(PlaceholderId, TextureSource)>,
}

pub fn apply_overrides(config: &ScenarioConfig, opts: &GenerateOptions) -> ScenarioConfig {
    let mut c = config.clone();
    if let Some(s) = opts.seed {
        c.sim.seed = s;
    }
    if let Some(m) = opts.max_frames {
        c.sim.max_frames = m;
    }
    if let Some((w, h)) = opts.image_size {
        for s in &mut c.sensors {
            s.image_size_x = w;
            s.image_size_y = h;
        }
    }
    if let Some(w) = opts.weather {
        c.weather = w;
    }
    c
}

pub fn sensor_outputs(config: &ScenarioConfig) -> Vec<SensorOutput> {
    config
        .sensors
        .iter()
        .enumerate()
        .map(|(i, s)| SensorOutput {
            index: i,
            blueprint: s.kind.blueprint().to_string(),
            kind: s.kind,
            dir: format!("{i}_{}", s.kind.blueprint()),
            width: s.image_size_x,
            height: s.image_size_y,
        })
        .collect()
}

/// Scene plus sensor tracks, advanced one tick at a time.
pub struct Simulation {
    pub scene: Scene,
    pub tracks: Vec<SensorTrack>,
    pub intrinsics: Vec<CameraIntrinsics>,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self, RunError> {
        let scene = build_scene(config, &AssetLibrary::builtin())?;
        let tracks = config
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| SensorTrack::new(i, s, config.sim.seed, config.sim.fps))
            .collect();
        let intrinsics = config.sensors.iter().map(intrinsics).collect();
        Ok(Self {
            scene,
            tracks,
            intrinsics,
        })
    }

    /// Steps once and returns the world and every sensor's camera.
    pub fn advance(&mut self) -> Result<(Scene, Vec<Camera>), RunError> {
        self.scene.step();
        let tick = self.scene.frame_index;
        let cams = self
            .tracks
            .iter()
            .zip(&self.intrinsics)
            .map(|(t, k)| Ok(Camera::new(t.pose_at(tick, &self.scene)?, *k)))
            .collect::<Result<Vec<_>, RunError>>()?;
        Ok((self.scene.clone(), cams))
    }
}

fn camera_key(c: &Camera) -> Vec<u64> {
    let p = c.pose;
    let k = c.intrinsics;
    let mut key = p.location.to_bits().to_vec();
    key.extend([p.rotation.pitch, p.rotation.yaw, p.rotation.roll, k.focal, k.cx, k.cy].map(f64::to_bits));
    key.extend([u64::from(k.width), u64::from(k.height)]);
    key
}

type Encoded = Vec<(String, Vec<u8>, String)>;

fn encode_outputs(sensor: &SensorOutput, f: u64, b: &FrameBundle) -> Encoded {
    let mut out = Vec::new();
    let mut push = |path: String, bytes: Vec<u8>| {
        let h = sha256_hex(&bytes);
        out.push((path, bytes, h));
    };
    match sensor.kind {
        SensorKind::Rgb => {
            push(sensor.frame_path(f), encode_png(&b.rgb));
            push(sensor.instance_path(f), encode_png(&b.instance_png()));
        }
        SensorKind::Depth => {
            push(sensor.frame_path(f), encode_png(&b.depth_png24().0));
            push(sensor.depth_mm_path(f), encode_png(&b.depth_mm16()));
            push(sensor.instance_path(f), encode_png(&b.instance_png()));
        }
        SensorKind::InstanceSegmentation => {
            push(sensor.frame_path(f), encode_png(&b.instance_png()));
        }
    }
    out
}

fn write_encoded(out: &Path, encoded: Vec<Encoded>, files: &mut BTreeMap<String, String>) -> Result<(), RunError> {
    for (rel, bytes, hash) in encoded.into_iter().flatten() {
        write_file(&out.join(&rel), &bytes)?;
        files.insert(rel, hash);
    }
    Ok(())
}

/// Simulates and renders every frame of the scenario into `out`.
pub fn generate(config: &ScenarioConfig, out: &Path, opts: &GenerateOptions) -> Result<RunManifest, RunError> {
    generate_inner(config, out, opts, None)
}

fn generate_inner(
    config: &ScenarioConfig,
    out: &Path,
    opts: &GenerateOptions,
    record: Option<PatchRecord>,
) -> Result<RunManifest, RunError> {
    let start = Instant::now();
    let mut config = apply_overrides(config, opts);
    let mut textures: BTreeMap<usize, TextureSource> = BTreeMap::new();
    for (i, p) in config.patches.iter_mut().enumerate() {
        if let Some(t) = &p.texture {
            let path = match &opts.base_dir {
                Some(b) => b.join(t),
                None => PathBuf::from(t),
            };
            textures.insert(i, TextureSource::load(&path)?);
            p.texture = Some(path.to_string_lossy().into_owned());
        }
    }
    let diags = config::validate(&config);
    if !diags.is_empty() {
        return Err(RunError::Invalid(diags));
    }
    for (id, t) in &opts.textures {
        if id.0 >= config.patches.len() {
            return Err(SceneError::UnknownPlaceholder(id.0).into());
        }
        textures.insert(id.0, t.clone());
    }
    let mut sim = Simulation::new(&config)?;
    let light = derive_light_model(&config.weather);
    let sensors = sensor_outputs(&config);
    create_dir(out)?;
    for s in &sensors {
        create_dir(&out.join(&s.dir))?;
    }
    let mut files = BTreeMap::new();
    let n = u64::from(config.sim.max_frames);
    let mut f0 = 0;
    while f0 < n {
        let count = BATCH_FRAMES.min(n - f0);
        let mut frames = Vec::with_capacity(count as usize);
        for f in f0..f0 + count {
            let (mut scene, cams) = sim.advance()?;
            for (id, t) in &textures {
                scene.set_patch_texture(PlaceholderId(*id), t.frame(f).clone())?;
            }
            frames.push((f, scene, cams));
        }
        // sensors sharing a pose in the same frame share one render; only
        // RGB sensors need shading
        let mut jobs: Vec<(usize, Camera, bool)> = Vec::new();
        let mut job_of: Vec<Vec<usize>> = Vec::new();
        for (fi, (_, _, cams)) in frames.iter().enumerate() {
            let mut seen: Vec<(Vec<u64>, usize)> = Vec::new();
            let mut ids = Vec::with_capacity(cams.len());
            for (cam, sensor) in cams.iter().zip(&sensors) {
                let shaded = sensor.kind == SensorKind::Rgb;
                let key = camera_key(cam);
                let id = match seen.iter().find(|(k, _)| *k == key) {
                    Some((_, j)) => {
                        jobs[*j].2 |= shaded;
                        *j
                    }
                    None => {
                        jobs.push((fi, *cam, shaded));
                        seen.push((key, jobs.len() - 1));
                        jobs.len() - 1
                    }
                };
                ids.push(id);
            }
            job_of.push(ids);
        }
        let bundles = par_map(&jobs, |(fi, cam, shaded)| {
            let scene = &frames[*fi].1;
            if *shaded {
                let rain = scene.stream(&format!("rain/{}", scene.frame_index));
                render(scene, cam, &light, rain)
            } else {
                render_geometry(scene, cam)
            }
        });
        let pairs: Vec<(usize, usize)> = (0..frames.len())
            .flat_map(|fi| (0..sensors.len()).map(move |s| (fi, s)))
            .collect();
        let encoded = par_map(&pairs, |&(fi, s)| {
            encode_outputs(&sensors[s], frames[fi].0, &bundles[job_of[fi][s]])
        });
        write_encoded(out, encoded, &mut files)?;
        f0 += count;
    }
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        seed: config.sim.seed,
        num_frames: n,
        fps: config.sim.fps,
        weather: config.weather,
        light,
        config,
        sensors,
        files,
        patch: record,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// An existing run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| RunError::NotARun {
            path: dir.to_path_buf(),
            message: format!("{MANIFEST_FILE}: {e}"),
        })?;
        let manifest = serde_json::from_str(&text).map_err(|e| RunError::NotARun {
            path: dir.to_path_buf(),
            message: format!("{MANIFEST_FILE}: {e}"),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Directory holding this run's depth and instance files.
    pub fn truth_dir(&self) -> PathBuf {
        match self.manifest.patch.as_ref().and_then(|p| p.base_run.as_ref()) {
            Some(b) => self.dir.join(b),
            None => self.dir.clone(),
        }
    }

    pub fn sensor(&self, index: usize) -> Result<&SensorOutput, RunError> {
        self.manifest
            .sensors
            .get(index)
            .ok_or_else(|| RunError::Usage(format!("run has no sensor {index}")))
    }

    pub fn rgb_sensors(&self) -> Vec<&SensorOutput> {
        self.manifest
            .sensors
            .iter()
            .filter(|s| s.kind == SensorKind::Rgb)
            .collect()
    }

    pub fn rgb(&self, sensor: &SensorOutput, f: u64) -> Result<RgbImage, RunError> {
        read_rgb(&self.dir.join(sensor.frame_path(f)))
    }

    pub fn instance_plane(&self, sensor: &SensorOutput, f: u64) -> Result<InstancePlane, RunError> {
        Ok(decode_instance_png(&read_rgb(&self.truth_dir().join(sensor.instance_path(f)))?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationFormat {
    Kwcoco,
    Mots,
}

impl FromStr for AnnotationFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kwcoco" => Ok(Self::Kwcoco),
            "mots" => Ok(Self::Mots),
            other => Err(format!("unknown annotation format `{other}` (expected kwcoco or mots)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateOptions {
    pub format: AnnotationFormat,
    pub min_pixels: u64,
    /// Also annotate stuff classes (walls, buildings, ground).
    pub all_classes: bool,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            format: AnnotationFormat::Kwcoco,
            min_pixels: DEFAULT_MIN_PIXELS,
            all_classes: false,
        }
    }
}

fn keep_class(all: bool, class: u8) -> bool {
    all || classes::is_thing(class)
}

/// Detections for every sensor and frame, in (sensor, frame) order.
pub fn run_detections(run: &Run, opts: &AnnotateOptions) -> Result<Vec<Vec<Detection>>, RunError> {
    let pairs: Vec<(usize, u64)> = (0..run.manifest.sensors.len())
        .flat_map(|s| (0..run.manifest.num_frames).map(move |f| (s, f)))
        .collect();
    par_map(&pairs, |&(s, f)| {
        let plane = run.instance_plane(&run.manifest.sensors[s], f)?;
        Ok(detections_for_frame(&plane, opts.min_pixels, f, s)
            .into_iter()
            .filter(|d| keep_class(opts.all_classes, d.class_id))
            .collect())
    })
    .into_iter()
    .collect()
}

/// Writes the annotation export for a run, records it in the run's
/// manifest and returns the written paths.
pub fn annotate(run_dir: &Path, opts: &AnnotateOptions) -> Result<Vec<PathBuf>, RunError> {
    let run = Run::open(run_dir)?;
    let written = write_annotations(&run, opts)?;
    let mut manifest = run.manifest;
    for path in &written {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let rel = path.strip_prefix(run_dir).unwrap_or(path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        manifest.files.insert(rel, sha256_hex(&bytes));
    }
    write_file(&run_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(written)
}

fn write_annotations(run: &Run, opts: &AnnotateOptions) -> Result<Vec<PathBuf>, RunError> {
    let run_dir = run.dir.as_path();
    let ann = run_dir.join("annotations");
    create_dir(&ann)?;
    match opts.format {
        AnnotationFormat::Kwcoco => {
            let dets: Vec<Detection> = run_detections(run, opts)?.into_iter().flatten().collect();
            let meta = kwcoco::RunMetadata {
                videos: run
                    .manifest
                    .sensors
                    .iter()
                    .map(|s| kwcoco::VideoInfo {
                        name: s.dir.clone(),
                        sensor_index: s.index,
                        width: s.width,
                        height: s.height,
                        frame_dir: s.dir.clone(),
                    })
                    .collect(),
                num_frames: run.manifest.num_frames,
            };
            let path = ann.join("kwcoco.json");
            write_file(&path, kwcoco::export_kwcoco(&dets, &meta).to_json().as_bytes())?;
            Ok(vec![path])
        }
        AnnotationFormat::Mots => {
            let root = ann.join("mots");
            let txt_dir = root.join("instances_txt");
            create_dir(&txt_dir)?;
            let mut written = Vec::new();
            for s in &run.manifest.sensors {
                let png_dir = root.join("instances").join(&s.dir);
                create_dir(&png_dir)?;
                let frames: Vec<u64> = (0..run.manifest.num_frames).collect();
                let per_frame = par_map(&frames, |&f| -> Result<(Vec<Detection>, Vec<u8>), RunError> {
                    let mut plane = run.instance_plane(s, f)?;
                    for p in &mut plane.data {
                        if p.instance_id != 0 && !keep_class(opts.all_classes, p.semantic_class) {
                            *p = crate::renderer::InstancePixel::BACKGROUND;
                        }
                    }
                    let dets = detections_for_frame(&plane, opts.min_pixels, f, s.index);
                    Ok((dets, encode_png(&mots::export_mots_png(&plane)?)))
                });
                let mut dets = Vec::new();
                for (f, r) in frames.iter().zip(per_frame) {
                    let (d, png) = r?;
                    let path = png_dir.join(format!("{f:06}.png"));
                    write_file(&path, &png)?;
                    written.push(path);
                    dets.extend(d);
                }
                let mut text = mots::export_mots_text(&dets)?.join("\n");
                if !text.is_empty() {
                    text.push('\n');
                }
                let path = txt_dir.join(format!("{}.txt", s.dir));
                write_file(&path, text.as_bytes())?;
                written.push(path);
            }
            Ok(written)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchOptions {
    pub method: PatchMethod,
    pub texture: TextureSource,
    pub placeholder: PlaceholderId,
}

#[derive(Clone, Copy, PartialEq)]
enum FrameStatus {
    Patched,
    NotVisible,
    Uncorrected,
}

/// Inserts a patch into an existing run, writing a new run to `out`.
///
/// `rendered` re-renders the scenario with the texture streamed onto the
/// placeholder. `digital` and `corrected` rewrite only the RGB frames of
/// the base run and reference its depth and instance files.
pub fn patch_run(base_dir: &Path, out: &Path, opts: &PatchOptions) -> Result<RunManifest, RunError> {
    let base = Run::open(base_dir)?;
    let config = base.manifest.config.clone();
    if opts.placeholder.0 >= config.patches.len() {
        return Err(SceneError::UnknownPlaceholder(opts.placeholder.0).into());
    }
    let mut record = PatchRecord {
        method: opts.method,
        placeholder: opts.placeholder.0,
        texture_sha256: opts.texture.sha256(),
        base_run: None,
        frames_patched: 0,
        frames_not_visible: 0,
        frames_uncorrected: 0,
    };
    if opts.method == PatchMethod::Rendered {
        record.frames_patched = base.manifest.num_frames;
        let gen = GenerateOptions {
            textures: vec![(opts.placeholder, opts.texture.clone())],
            ..Default::default()
        };
        return generate_inner(&config, out, &gen, Some(record));
    }
    let start = Instant::now();
    let truth = fs::canonicalize(base.truth_dir()).map_err(io_err(base_dir))?;
    let mut sim = Simulation::new(&config)?;
    let sensors = base.rgb_sensors().into_iter().cloned().collect::<Vec<_>>();
    create_dir(out)?;
    for s in &sensors {
        create_dir(&out.join(&s.dir))?;
    }
    let mut files = BTreeMap::new();
    let n = base.manifest.num_frames;
    let mut f0 = 0;
    while f0 < n {
        let count = BATCH_FRAMES.min(n - f0);
        let mut frames = Vec::with_capacity(count as usize);
        for f in f0..f0 + count {
            let (scene, cams) = sim.advance()?;
            frames.push((f, scene, cams));
        }
        let pairs: Vec<(usize, usize)> = (0..frames.len())
            .flat_map(|fi| (0..sensors.len()).map(move |s| (fi, s)))
            .collect();
        let results = par_map(&pairs, |&(fi, si)| -> Result<(Encoded, FrameStatus), RunError> {
            let (f, scene, cams) = &frames[fi];
            let s = &sensors[si];
            let rgb = base.rgb(s, *f)?;
            let plane = base.instance_plane(s, *f)?;
            let texture = opts.texture.frame(*f);
            let (img, status) = match locate_in(&plane, &cams[s.index], scene, opts.placeholder) {
                Err(PatchError::NotVisible(..) | PatchError::BehindCamera(_)) => (rgb, FrameStatus::NotVisible),
                Err(e) => return Err(e.into()),
                Ok(pl) => match opts.method {
                    PatchMethod::Corrected => match estimate_in(&rgb, &plane, scene, &pl) {
                        Ok(t) => (composite_color_corrected(&rgb, texture, &pl, &t), FrameStatus::Patched),
                        Err(PatchError::MaskTooSmall(_) | PatchError::DegenerateObservation) => {
                            (composite_digital(&rgb, texture, &pl), FrameStatus::Uncorrected)
                        }
                        Err(e) => return Err(e.into()),
                    },
                    _ => (composite_digital(&rgb, texture, &pl), FrameStatus::Patched),
                },
            };
            let bytes = encode_png(&img);
            let hash = sha256_hex(&bytes);
            Ok((vec![(s.frame_path(*f), bytes, hash)], status))
        });
        let mut encoded = Vec::with_capacity(results.len());
        for r in results {
            let (e, status) = r?;
            match status {
                FrameStatus::Patched => record.frames_patched += 1,
                FrameStatus::NotVisible => record.frames_not_visible += 1,
                FrameStatus::Uncorrected => record.frames_uncorrected += 1,
            }
            encoded.push(e);
        }
        write_encoded(out, encoded, &mut files)?;
        f0 += count;
    }
    record.base_run = Some(truth.to_string_lossy().into_owned());
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        seed: base.manifest.seed,
        num_frames: n,
        fps: base.manifest.fps,
        weather: base.manifest.weather,
        light: base.manifest.light,
        config,
        sensors: base.manifest.sensors.clone(),
        files,
        patch: Some(record),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// `count` frame indices spread evenly over `0..n`.
fn spread(n: u64, count: usize) -> Vec<u64> {
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if n <= count as u64 || count == 1 {
        return (0..n.min(count as u64).max(1)).collect();
    }
    (0..count as u64).map(|i| i * (n - 1) / (count as u64 - 1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationParams {
    /// Frames used for the background median.
    pub window: usize,
    pub tolerance: u8,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self {
            window: 31,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub run: String,
    pub sensor: String,
    pub frames: u64,
    pub window: usize,
    pub tolerance: u8,
    pub patch_pixels: u64,
    pub ablated_patch_pixels: u64,
    pub removal_rate: f64,
}

/// Fraction of patch pixels that background ablation removes, per RGB
/// sensor. The patch region comes from the instance plane.
pub fn eval_ablation_run(run_dir: &Path, params: &AblationParams) -> Result<Vec<AblationResult>, RunError> {
    let run = Run::open(run_dir)?;
    let n = run.manifest.num_frames;
    let mut out = Vec::new();
    for s in run.rgb_sensors() {
        let bg_frames = spread(n, params.window)
            .iter()
            .map(|&f| run.rgb(s, f))
            .collect::<Result<Vec<_>, _>>()?;
        let mut model = build_background(&bg_frames)?;
        model.tolerance = params.tolerance;
        let frames: Vec<u64> = (0..n).collect();
        let counts = par_map(&frames, |&f| -> Result<(u64, u64), RunError> {
            let rgb = run.rgb(s, f)?;
            let gt = run.instance_plane(s, f)?.mask_of_class(classes::PATCH);
            let (_, mask) = ablate_with_tolerance(&rgb, &model, model.tolerance)?;
            let total = gt.iter().filter(|&&g| g).count() as u64;
            let hit = gt.iter().zip(&mask).filter(|(&g, &m)| g && m).count() as u64;
            Ok((total, hit))
        });
        let (mut total, mut hit) = (0, 0);
        for c in counts {
            let (t, h) = c?;
            total += t;
            hit += h;
        }
        if total == 0 {
            return Err(DefenseError::EmptyGroundTruth.into());
        }
        out.push(AblationResult {
            run: run_dir.display().to_string(),
            sensor: s.dir.clone(),
            frames: n,
            window: bg_frames.len(),
            tolerance: params.tolerance,
            patch_pixels: total,
            ablated_patch_pixels: hit,
            removal_rate: hit as f64 / total as f64,
        });
    }
    Ok(out)
}

pub fn eval_ablation(runs: &[PathBuf], params: &AblationParams) -> Result<Value, RunError> {
    let mut rows = Vec::new();
    for r in runs {
        rows.extend(eval_ablation_run(r, params)?);
    }
    Ok(json!({
        "experiment": "ablation",
        "tolerance": params.tolerance,
        "window": params.window,
        "results": rows,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskEvalParams {
    pub masks: MaskParams,
    /// Benign frames used for color statistics.
    pub stats_frames: usize,
    /// Evaluate every `stride`-th frame.
    pub stride: u64,
}

impl Default for MaskEvalParams {
    fn default() -> Self {
        Self {
            masks: MaskParams::default(),
            stats_frames: 31,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResult {
    pub run: String,
    pub sensor: String,
    pub mask: String,
    pub width: u32,
    pub height: u32,
    pub frames: u64,
    pub coverage: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Scores the three masks on a patched run. Color statistics come from
/// `benign_dir`, a run of the same scenario without the patch.
pub fn eval_masks_run(run_dir: &Path, benign_dir: &Path, params: &MaskEvalParams) -> Result<Vec<MaskResult>, RunError> {
    let run = Run::open(run_dir)?;
    let benign = Run::open(benign_dir)?;
    let n = run.manifest.num_frames;
    let frames: Vec<u64> = (0..n).step_by(params.stride.max(1) as usize).collect();
    let mut out = Vec::new();
    for s in run.rgb_sensors() {
        let bs = benign.sensor(s.index)?;
        if (bs.width, bs.height) != (s.width, s.height) {
            return Err(RunError::Usage(format!(
                "benign run sensor {} is {}x{}, patched run is {}x{}",
                s.index, bs.width, bs.height, s.width, s.height
            )));
        }
        let mut stats = SceneStats::default();
        for f in spread(benign.manifest.num_frames, params.stats_frames) {
            stats.add(&benign.rgb(bs, f)?);
        }
        let rare = stats.rare_bins(params.masks.rare_fraction)?;
        let per_frame = par_map(&frames, |&f| -> Result<[(OverlapCounts, u64); 3], RunError> {
            let rgb = run.rgb(s, f)?;
            let gt = run.instance_plane(s, f)?.mask_of_class(classes::PATCH);
            let color: Vec<bool> = rgb.pixels().map(|p| rare[defense::color_bin(p.0)]).collect();
            let masks = [
                color,
                defense::high_frequency_mask(&rgb, params.masks.hf_threshold).mask,
                defense::hue_saturation_mask(&rgb, params.masks.s_min, params.masks.v_min).mask,
            ];
            Ok(masks.map(|m| (OverlapCounts::of(&m, &gt), m.iter().filter(|&&b| b).count() as u64)))
        });
        let mut totals = [(OverlapCounts::default(), 0u64); 3];
        for r in per_frame {
            for (t, (c, k)) in totals.iter_mut().zip(r?) {
                t.0.add(c);
                t.1 += k;
            }
        }
        let pixels = (frames.len() as u64 * u64::from(s.width) * u64::from(s.height)).max(1);
        for (name, (c, flagged)) in MASK_NAMES.iter().zip(totals) {
            let score = c.score()?;
            out.push(MaskResult {
                run: run_dir.display().to_string(),
                sensor: s.dir.clone(),
                mask: (*name).to_string(),
                width: s.width,
                height: s.height,
                frames: frames.len() as u64,
                coverage: flagged as f64 / pixels as f64,
                precision: score.precision,
                recall: score.recall,
                iou: score.iou,
            });
        }
    }
    Ok(out)
}

/// Mask table over (patched, benign) run pairs, typically the same scene at
/// several resolutions. `precision_drop` is first-row minus last-row
/// precision per mask.
pub fn eval_masks(pairs: &[(PathBuf, PathBuf)], params: &MaskEvalParams) -> Result<Value, RunError> {
    let mut rows: Vec<MaskResult> = Vec::new();
    for (run, benign) in pairs {
        rows.extend(eval_masks_run(run, benign, params)?);
    }
    let mut drop = serde_json::Map::new();
    for name in MASK_NAMES {
        let mine: Vec<&MaskResult> = rows.iter().filter(|r| r.mask == name).collect();
        if let (Some(first), Some(last)) = (mine.first(), mine.last()) {
            if mine.len() > 1 {
                drop.insert(name.to_string(), json!(first.precision - last.precision));
            }
        }
    }
    Ok(json!({
        "experiment": "masks",
        "params": {
            "rare_fraction": params.masks.rare_fraction,
            "hf_threshold": params.masks.hf_threshold,
            "s_min": params.masks.s_min,
            "v_min": params.masks.v_min,
            "stats_frames": params.stats_frames,
            "stride": params.stride,
        },
        "results": rows,
        "precision_drop": drop,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_indices() {
        assert_eq!(spread(300, 4), vec![0, 99, 199, 299]);
        assert_eq!(spread(3, 31), vec![0, 1, 2]);
        assert_eq!(spread(0, 5), Vec::<u64>::new());
    }

    #[test]
    fn texture_sequence_holds_last() {
        let a = RgbImage::from_pixel(1, 1, image::Rgb([1, 0, 0]));
        let b = RgbImage::from_pixel(1, 1, image::Rgb([2, 0, 0]));
        let t = TextureSource::Sequence(vec![(2, a), (5, b)]);
        assert_eq!(t.frame(0).get_pixel(0, 0).0[0], 1);
        assert_eq!(t.frame(4).get_pixel(0, 0).0[0], 1);
        assert_eq!(t.frame(5).get_pixel(0, 0).0[0], 2);
        assert_eq!(t.frame(900).get_pixel(0, 0).0[0], 2);
    }

    #[test]
    fn output_dir_resolution() {
        assert_eq!(resolve_output_dir(Some(Path::new("/x")), "_out", None), PathBuf::from("/x"));
        assert_eq!(
            resolve_output_dir(None, "_out", Some(PathBuf::from("/root"))),
            PathBuf::from("/root/_out")
        );
        assert_eq!(resolve_output_dir(None, "_out", None), PathBuf::from("./_out"));
    }

    #[test]
    fn png_round_trips() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8, y as u8, 7]));
        let back = image::load_from_memory(&encode_png(&img)).unwrap().into_rgb8();
        assert_eq!(back, img);
        let deep: ImageBuffer<image::Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(3, 2, |x, y| image::Luma([x as u16 * 1000 + y as u16 * 40000]));
        match image::load_from_memory(&encode_png(&deep)).unwrap() {
            image::DynamicImage::ImageLuma16(d) => assert_eq!(d, deep),
            other => panic!("{:?}", other.color()),
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage("x".into()).exit_code(), 2);
        assert_eq!(RunError::Invalid(vec![]).exit_code(), 2);
        assert_eq!(
            RunError::NotARun {
                path: "x".into(),
                message: "y".into()
            }
            .exit_code(),
            3
        );
    }
}
