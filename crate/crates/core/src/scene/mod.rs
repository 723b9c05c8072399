//! World state: static meshes, walkers and patch placeholders, advanced at a
//! fixed timestep.

pub mod assets;
pub mod layouts;

use crate::config::{ActorSpec, PatchSpec, ScenarioConfig};
use crate::geometry::{Rotator, Transform, Vec3};
use crate::rng::SplitMix64;
use image::RgbImage;
use std::sync::Arc;
use thiserror::Error;

pub use assets::{AssetLibrary, WalkerAsset};

/// Semantic class ids, following the CARLA palette numbering. `PATCH` is an
/// addition for placeholders.
pub mod classes {
    pub const UNLABELED: u8 = 0;
    pub const BUILDING: u8 = 1;
    pub const PEDESTRIAN: u8 = 4;
    pub const POLE: u8 = 5;
    pub const ROAD: u8 = 7;
    pub const SIDEWALK: u8 = 8;
    pub const VEGETATION: u8 = 9;
    pub const WALL: u8 = 11;
    pub const GROUND: u8 = 14;
    pub const STATIC: u8 = 19;
    pub const PATCH: u8 = 23;

    pub fn name(class: u8) -> &'static str {
        match class {
            UNLABELED => "unlabeled",
            BUILDING => "building",
            PEDESTRIAN => "pedestrian",
            POLE => "pole",
            ROAD => "road",
            SIDEWALK => "sidewalk",
            VEGETATION => "vegetation",
            WALL => "wall",
            GROUND => "ground",
            STATIC => "static",
            PATCH => "patch",
            _ => "other",
        }
    }

    /// Classes treated as annotatable objects rather than stuff.
    pub fn is_thing(class: u8) -> bool {
        matches!(class, PEDESTRIAN | PATCH)
    }
}

/// Chroma-key green used for untextured placeholders.
pub const PLACEHOLDER_GREEN: [u8; 3] = [0, 255, 0];

/// Walker box extents (depth, width, height) in meters.
pub const WALKER_SIZE: Vec3 = Vec3::new(0.4, 0.5, 1.8);
/// Height of a walker's reference point above its soles.
pub const WALKER_ORIGIN_HEIGHT: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown townmap `{0}`")]
    UnknownTownmap(String),
    #[error("no walker asset matches blueprint `{0}`")]
    UnknownBlueprint(String),
    #[error("actor {index} spawns inside static geometry (instance {static_instance})")]
    SpawnCollision { index: usize, static_instance: u16 },
    #[error("unknown placeholder id {0}")]
    UnknownPlaceholder(usize),
    #[error("texture must be at least 1x1")]
    EmptyTexture,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Flat([u8; 3]),
    Texture(Arc<RgbImage>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v: [Vec3; 3],
    pub uv: [[f64; 2]; 3],
}

impl Triangle {
    pub fn normal(&self) -> Vec3 {
        (self.v[1] - self.v[0]).cross(self.v[2] - self.v[0]).normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_points(points: impl IntoIterator<Item = Vec3>) -> Self {
        let mut it = points.into_iter();
        let first = it.next().unwrap_or(Vec3::ZERO);
        it.fold(
            Aabb {
                min: first,
                max: first,
            },
            |b, p| Aabb {
                min: b.min.min(p),
                max: b.max.max(p),
            },
        )
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x
            && o.min.x < self.max.x
            && self.min.y < o.max.y
            && o.min.y < self.max.y
            && self.min.z < o.max.z
            && o.min.z < self.max.z
    }

    /// Slab test for a ray with `t` in `(0, ∞)`.
    pub fn hit_by_ray(&self, origin: Vec3, dir: Vec3) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for (o, d, lo, hi) in [
            (origin.x, dir.x, self.min.x, self.max.x),
            (origin.y, dir.y, self.min.y, self.max.y),
            (origin.z, dir.z, self.min.z, self.max.z),
        ] {
            if d.abs() < 1e-300 {
                if o < lo || o > hi {
                    return false;
                }
            } else {
                let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub triangles: Vec<Triangle>,
    pub albedo: Albedo,
    pub semantic_class: u8,
    pub instance_id: u16,
}

impl Mesh {
    pub fn bounds(&self) -> Aabb {
        Aabb::of_points(self.triangles.iter().flat_map(|t| t.v))
    }

    /// Axis-aligned box with each face mapped to the full UV square.
    pub fn cuboid(min: Vec3, max: Vec3, albedo: Albedo, semantic_class: u8) -> Self {
        let local = cuboid_triangles(min, max);
        Mesh {
            triangles: local,
            albedo,
            semantic_class,
            instance_id: 0,
        }
    }

    /// Quad `c0 c1 c2 c3` (consistent winding) with UVs (0,0) (1,0) (1,1) (0,1).
    pub fn quad(corners: [Vec3; 4], albedo: Albedo, semantic_class: u8) -> Self {
        Mesh {
            triangles: quad_triangles(corners).to_vec(),
            albedo,
            semantic_class,
            instance_id: 0,
        }
    }
}

fn quad_triangles(c: [Vec3; 4]) -> [Triangle; 2] {
    let uv = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    [
        Triangle {
            v: [c[0], c[1], c[2]],
            uv: [uv[0], uv[1], uv[2]],
        },
        Triangle {
            v: [c[0], c[2], c[3]],
            uv: [uv[0], uv[2], uv[3]],
        },
    ]
}

fn cuboid_triangles(min: Vec3, max: Vec3) -> Vec<Triangle> {
    let p = |x: bool, y: bool, z: bool| {
        Vec3::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let faces = [
        // -x, +x, -y, +y, -z, +z
        [p(false, true, true), p(false, false, true), p(false, false, false), p(false, true, false)],
        [p(true, false, true), p(true, true, true), p(true, true, false), p(true, false, false)],
        [p(false, false, true), p(true, false, true), p(true, false, false), p(false, false, false)],
        [p(true, true, true), p(false, true, true), p(false, true, false), p(true, true, false)],
        [p(false, false, false), p(true, false, false), p(true, true, false), p(false, true, false)],
        [p(false, true, true), p(true, true, true), p(true, false, true), p(false, false, true)],
    ];
    faces.iter().flat_map(|f| quad_triangles(*f)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub role_name: String,
    pub asset: WalkerAsset,
    pub transform: Transform,
    pub speed: f64,
    pub destination: Option<Vec3>,
    pub arrived: bool,
    pub instance_id: u16,
    spawn: Vec3,
    steps_taken: u64,
}

impl Actor {
    /// Distance covered so far along the straight spawn→destination path.
    pub fn distance_travelled(&self) -> f64 {
        (self.transform.location - self.spawn).length()
    }

    pub fn spawn_location(&self) -> Vec3 {
        self.spawn
    }

    fn bounds_at(location: Vec3) -> Aabb {
        let h = Vec3::new(WALKER_SIZE.x / 2.0, WALKER_SIZE.y / 2.0, 0.0);
        let lo = Vec3::new(location.x - h.x.max(h.y), location.y - h.x.max(h.y), location.z - WALKER_ORIGIN_HEIGHT);
        let hi = Vec3::new(
            location.x + h.x.max(h.y),
            location.y + h.x.max(h.y),
            location.z - WALKER_ORIGIN_HEIGHT + WALKER_SIZE.z,
        );
        Aabb { min: lo, max: hi }
    }

    /// The walker's box in world space, rotated by yaw only.
    pub fn mesh(&self) -> Mesh {
        let min = Vec3::new(-WALKER_SIZE.x / 2.0, -WALKER_SIZE.y / 2.0, -WALKER_ORIGIN_HEIGHT);
        let max = Vec3::new(
            WALKER_SIZE.x / 2.0,
            WALKER_SIZE.y / 2.0,
            WALKER_SIZE.z - WALKER_ORIGIN_HEIGHT,
        );
        let pose = Transform::new(
            self.transform.location,
            Rotator::new(0.0, self.transform.rotation.yaw, 0.0),
        );
        let triangles = cuboid_triangles(min, max)
            .into_iter()
            .map(|t| Triangle {
                v: t.v.map(|v| pose.apply(v)),
                uv: t.uv,
            })
            .collect();
        Mesh {
            triangles,
            albedo: Albedo::Flat(self.asset.albedo),
            semantic_class: classes::PEDESTRIAN,
            instance_id: self.instance_id,
        }
    }

    fn step(&mut self, fps: u32) {
        let Some(dest) = self.destination else {
            return;
        };
        if self.arrived {
            return;
        }
        let per_step = self.speed / f64::from(fps);
        let path = dest - self.spawn;
        let total = path.length();
        let done = self.steps_taken as f64 * per_step;
        if total - done <= per_step {
            self.transform.location = dest;
            self.arrived = true;
        } else {
            self.steps_taken += 1;
            let t = self.steps_taken as f64 * per_step / total;
            self.transform.location = self.spawn + path * t;
        }
    }
}

/// Index of a placeholder in the scenario's `patches` list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlaceholderId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlaceholder {
    pub name: String,
    /// Top-left, top-right, bottom-right, bottom-left as seen from the front.
    pub corners: [Vec3; 4],
    pub instance_id: u16,
    pub texture: Option<Arc<RgbImage>>,
}

impl PatchPlaceholder {
    pub fn from_spec(spec: &PatchSpec, instance_id: u16) -> Self {
        let (hw, hh) = (spec.width / 2.0, spec.height / 2.0);
        let local = [
            Vec3::new(0.0, hw, hh),
            Vec3::new(0.0, -hw, hh),
            Vec3::new(0.0, -hw, -hh),
            Vec3::new(0.0, hw, -hh),
        ];
        Self {
            name: spec.name.clone(),
            corners: local.map(|p| spec.transform.apply(p)),
            instance_id,
            texture: None,
        }
    }

    pub fn normal(&self) -> Vec3 {
        (self.corners[1] - self.corners[0])
            .cross(self.corners[3] - self.corners[0])
            .normalized()
    }

    /// Largest distance of a corner from the plane through the other three.
    pub fn planarity_error(&self) -> f64 {
        let c = &self.corners;
        let n = (c[1] - c[0]).cross(c[2] - c[0]).normalized();
        (c[3] - c[0]).dot(n).abs()
    }

    pub fn mesh(&self) -> Mesh {
        let albedo = match &self.texture {
            Some(t) => Albedo::Texture(Arc::clone(t)),
            None => Albedo::Flat(PLACEHOLDER_GREEN),
        };
        Mesh {
            triangles: quad_triangles(self.corners).to_vec(),
            albedo,
            semantic_class: classes::PATCH,
            instance_id: self.instance_id,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub statics: Arc<Vec<Mesh>>,
    pub actors: Vec<Actor>,
    pub placeholders: Vec<PatchPlaceholder>,
    pub frame_index: u64,
    pub fps: u32,
    pub seed: u64,
    pub layout: String,
}

impl Scene {
    /// Deterministic stream for `name` under this scene's seed.
    pub fn stream(&self, name: &str) -> SplitMix64 {
        SplitMix64::stream(self.seed, name)
    }

    pub fn step(&mut self) {
        for a in &mut self.actors {
            a.step(self.fps);
        }
        self.frame_index += 1;
    }

    pub fn stepped(mut self) -> Self {
        self.step();
        self
    }

    pub fn actor_by_role(&self, role: &str) -> Option<&Actor> {
        self.actors.iter().find(|a| a.role_name == role)
    }

    pub fn placeholder(&self, id: PlaceholderId) -> Result<&PatchPlaceholder, SceneError> {
        self.placeholders
            .get(id.0)
            .ok_or(SceneError::UnknownPlaceholder(id.0))
    }

    /// Streams `texture` onto a placeholder. Geometry and ids are unchanged.
    pub fn set_patch_texture(
        &mut self,
        id: PlaceholderId,
        texture: RgbImage,
    ) -> Result<(), SceneError> {
        if texture.width() == 0 || texture.height() == 0 {
            return Err(SceneError::EmptyTexture);
        }
        let p = self
            .placeholders
            .get_mut(id.0)
            .ok_or(SceneError::UnknownPlaceholder(id.0))?;
        p.texture = Some(Arc::new(texture));
        Ok(())
    }

    /// Restores a placeholder's chroma-green default.
    pub fn clear_patch_texture(&mut self, id: PlaceholderId) -> Result<(), SceneError> {
        let p = self
            .placeholders
            .get_mut(id.0)
            .ok_or(SceneError::UnknownPlaceholder(id.0))?;
        p.texture = None;
        Ok(())
    }

    /// Every mesh in the scene at the current frame, in a fixed order:
    /// statics, walkers, placeholders.
    pub fn meshes(&self) -> Vec<Mesh> {
        let mut out: Vec<Mesh> = self.statics.iter().cloned().collect();
        out.extend(self.actors.iter().map(Actor::mesh));
        out.extend(self.placeholders.iter().map(PatchPlaceholder::mesh));
        out
    }

    /// Meshes without the walkers or placeholders.
    pub fn without_dynamics(&self) -> Scene {
        Scene {
            actors: Vec::new(),
            placeholders: Vec::new(),
            ..self.clone()
        }
    }
}

fn spawn_actor(spec: &ActorSpec, asset: WalkerAsset, instance_id: u16) -> Actor {
    let mut transform = spec.spawn;
    let destination = spec.destination.map(|d| d.location);
    if let Some(d) = destination {
        let dir = d - spec.spawn.location;
        if dir.x != 0.0 || dir.y != 0.0 {
            transform.rotation.yaw = dir.y.atan2(dir.x).to_degrees();
        }
    }
    Actor {
        role_name: spec.role_name.clone(),
        asset,
        transform,
        speed: spec.speed,
        destination,
        arrived: false,
        instance_id,
        spawn: spec.spawn.location,
        steps_taken: 0,
    }
}

/// Instantiates the scenario's world. Walker ids are 1..=n in spawn order,
/// placeholders follow, then static geometry.
pub fn build_scene(config: &ScenarioConfig, assets: &AssetLibrary) -> Result<Scene, SceneError> {
    let layout = layouts::layout_by_name(&config.sim.townmap)
        .ok_or_else(|| SceneError::UnknownTownmap(config.sim.townmap.clone()))?;
    let mut asset_rng = SplitMix64::stream(config.sim.seed, "assets");
    let mut next_id: u16 = 1;
    let mut actors = Vec::with_capacity(config.actors.len());
    for spec in &config.actors {
        let asset = assets
            .resolve(&spec.blueprint, &mut asset_rng)
            .ok_or_else(|| SceneError::UnknownBlueprint(spec.blueprint.clone()))?;
        actors.push(spawn_actor(spec, asset, next_id));
        next_id += 1;
    }
    let mut placeholders = Vec::with_capacity(config.patches.len());
    for p in &config.patches {
        placeholders.push(PatchPlaceholder::from_spec(p, next_id));
        next_id += 1;
    }
    let mut statics = (layout.build)();
    for m in &mut statics {
        m.instance_id = next_id;
        next_id += 1;
    }
    for (index, a) in actors.iter().enumerate() {
        let mut b = Actor::bounds_at(a.transform.location);
        let shrink = Vec3::new(1e-3, 1e-3, 1e-3);
        b.min = b.min + shrink;
        b.max = b.max - shrink;
        if let Some(m) = statics.iter().find(|m| m.bounds().overlaps(&b)) {
            return Err(SceneError::SpawnCollision {
                index,
                static_instance: m.instance_id,
            });
        }
    }
    Ok(Scene {
        statics: Arc::new(statics),
        actors,
        placeholders,
        frame_index: 0,
        fps: config.sim.fps,
        seed: config.sim.seed,
        layout: layout.name.to_string(),
    })
}
