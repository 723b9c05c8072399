//! Software rasterizer producing aligned RGB, depth and instance planes.
//!
//! One z-buffer pass decides the visible surface for every pixel; all three
//! planes are then derived from that single winner, so silhouettes, depth
//! edges and instance boundaries coincide by construction. Shading is
//! Lambertian with a constant ambient term and hard ray-cast shadows,
//! followed by exponential fog on planar depth. Rain is drawn on RGB only.

pub mod codec;
pub mod light;

use crate::geometry::Vec3;
use crate::rng::SplitMix64;
use crate::scene::{classes, Albedo, Mesh, Scene};
use crate::sensor_rig::{Camera, CameraIntrinsics, NEAR_PLANE};
use image::RgbImage;
use light::{FAR, SHADOW_EPSILON};

pub use light::{derive_light_model, LightModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub struct InstancePixel {
    pub semantic_class: u8,
    pub instance_id: u16,
}

impl InstancePixel {
    pub const BACKGROUND: InstancePixel = InstancePixel {
        semantic_class: 0,
        instance_id: 0,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstancePlane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<InstancePixel>,
}

impl InstancePlane {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![InstancePixel::BACKGROUND; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> InstancePixel {
        self.data[(y * self.width + x) as usize]
    }

    /// Row-major mask of pixels owned by `instance_id`.
    pub fn mask_of(&self, instance_id: u16) -> Vec<bool> {
        self.data.iter().map(|p| p.instance_id == instance_id).collect()
    }

    pub fn mask_of_class(&self, class: u8) -> Vec<bool> {
        self.data
            .iter()
            .map(|p| p.instance_id != 0 && p.semantic_class == class)
            .collect()
    }
}

/// Aligned per-sensor outputs for one frame.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub rgb: RgbImage,
    /// Planar depth in meters, row-major; [`FAR`] where nothing was hit.
    pub depth: Vec<f64>,
    pub instance: InstancePlane,
    pub frame_index: u64,
    pub sensor_index: usize,
    pub camera: Camera,
}

impl FrameBundle {
    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }
}

/// Bilinear, clamp-to-edge texture lookup. `(u, v)` spans the texture with
/// (0, 0) at the top-left corner of the first texel.
pub fn sample_bilinear(tex: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (tex.width() as i64, tex.height() as i64);
    let x = u * w as f64 - 0.5;
    let y = v * h as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: i64, yi: i64| {
        let p = tex.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0;
        [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (at(xi, yi), at(xi + 1, yi), at(xi, yi + 1), at(xi + 1, yi + 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bot = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bot - top) * fy;
    }
    out
}

pub fn to_u8(x: f64) -> u8 {
    if x >= 0.0 {
        (x.min(255.0) + 0.5) as u8
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    cam: Vec3,
    world: Vec3,
    uv: [f64; 2],
}

/// A clipped triangle in screen space, ready for scan conversion.
#[derive(Debug, Clone)]
struct ScreenTri {
    p: [(f64, f64); 3],
    inv_depth: [f64; 3],
    world: [Vec3; 3],
    uv: [[f64; 2]; 3],
    area: f64,
    mesh: usize,
    normal: Vec3,
    y_range: (i64, i64),
    x_range: (i64, i64),
}

impl ScreenTri {
    fn edge(a: (f64, f64), b: (f64, f64), px: f64, py: f64) -> f64 {
        (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
    }

    /// Screen-space barycentrics at a pixel center, or `None` outside.
    fn barycentric(&self, px: f64, py: f64) -> Option<[f64; 3]> {
        let w0 = Self::edge(self.p[1], self.p[2], px, py) / self.area;
        let w1 = Self::edge(self.p[2], self.p[0], px, py) / self.area;
        let w2 = Self::edge(self.p[0], self.p[1], px, py) / self.area;
        (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some([w0, w1, w2])
    }

    /// Pixel columns on row `py` that may pass [`Self::barycentric`], padded by
    /// one pixel on each side.
    fn row_span(&self, py: f64) -> Option<(i64, i64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let s = self.area.signum();
        for (a, b) in [(self.p[1], self.p[2]), (self.p[2], self.p[0]), (self.p[0], self.p[1])] {
            // edge value is c0 + c1 * px
            let c1 = -(b.1 - a.1) * s;
            let c0 = ((b.0 - a.0) * (py - a.1) + (b.1 - a.1) * a.0) * s;
            if c1 > 0.0 {
                lo = lo.max(-c0 / c1);
            } else if c1 < 0.0 {
                hi = hi.min(-c0 / c1);
            } else if c0 < 0.0 {
                return None;
            }
        }
        if !(lo <= hi) {
            return None;
        }
        let x0 = ((lo - 0.5).ceil() as i64 - 1).max(self.x_range.0);
        let x1 = ((hi - 0.5).floor() as i64 + 1).min(self.x_range.1);
        (x0 <= x1).then_some((x0, x1))
    }

    fn depth_at(&self, b: [f64; 3]) -> f64 {
        1.0 / (b[0] * self.inv_depth[0] + b[1] * self.inv_depth[1] + b[2] * self.inv_depth[2])
    }

    /// Perspective-correct weights from screen barycentrics.
    fn perspective_weights(&self, b: [f64; 3]) -> [f64; 3] {
        let z = self.depth_at(b);
        [
            b[0] * self.inv_depth[0] * z,
            b[1] * self.inv_depth[1] * z,
            b[2] * self.inv_depth[2] * z,
        ]
    }
}

fn clip_near(poly: &[ClipVertex]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.cam.x > NEAR_PLANE;
        let b_in = b.cam.x > NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.cam.x) / (b.cam.x - a.cam.x);
            let mut cam = a.cam.lerp(b.cam, t);
            // keep the clipped vertex strictly in front of the near plane
            cam.x = cam.x.max(NEAR_PLANE * (1.0 + 1e-12));
            out.push(ClipVertex {
                cam,
                world: a.world.lerp(b.world, t),
                uv: [a.uv[0] + (b.uv[0] - a.uv[0]) * t, a.uv[1] + (b.uv[1] - a.uv[1]) * t],
            });
        }
    }
    out
}

fn prepare(meshes: &[Mesh], camera: &Camera) -> Vec<ScreenTri> {
    let (w, h) = (
        i64::from(camera.intrinsics.width),
        i64::from(camera.intrinsics.height),
    );
    let mut out = Vec::new();
    for (mi, mesh) in meshes.iter().enumerate() {
        for tri in &mesh.triangles {
            let normal = tri.normal();
            if !(normal.length() > 0.0) {
                continue;
            }
            let verts: Vec<ClipVertex> = (0..3)
                .map(|k| ClipVertex {
                    cam: camera.to_camera(tri.v[k]),
                    world: tri.v[k],
                    uv: tri.uv[k],
                })
                .collect();
            if verts.iter().all(|v| v.cam.x <= NEAR_PLANE) {
                continue;
            }
            let poly = if verts.iter().all(|v| v.cam.x > NEAR_PLANE) {
                verts
            } else {
                clip_near(&verts)
            };
            for k in 1..poly.len().saturating_sub(1) {
                let vs = [poly[0], poly[k], poly[k + 1]];
                let p = vs.map(|v| camera.image_point(v.cam));
                let area = ScreenTri::edge(p[0], p[1], p[2].0, p[2].1);
                if !(area.abs() > 1e-12) || !area.is_finite() {
                    continue;
                }
                let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
                let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
                let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
                let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
                // pixel x covers centers x + 0.5 in [min, max]
                let x0 = ((min_x - 0.5).ceil() as i64).max(0);
                let x1 = ((max_x - 0.5).floor() as i64).min(w - 1);
                let y0 = ((min_y - 0.5).ceil() as i64).max(0);
                let y1 = ((max_y - 0.5).floor() as i64).min(h - 1);
                if x0 > x1 || y0 > y1 {
                    continue;
                }
                out.push(ScreenTri {
                    p,
                    inv_depth: vs.map(|v| 1.0 / v.cam.x),
                    world: vs.map(|v| v.world),
                    uv: vs.map(|v| v.uv),
                    area,
                    mesh: mi,
                    normal,
                    y_range: (y0, y1),
                    x_range: (x0, x1),
                });
            }
        }
    }
    out
}

/// Triangles grouped per mesh with bounds, for shadow rays.
struct Occluders {
    meshes: Vec<(crate::scene::Aabb, Vec<[Vec3; 3]>)>,
}

impl Occluders {
    fn new(meshes: &[Mesh]) -> Self {
        Self {
            meshes: meshes
                .iter()
                .map(|m| (m.bounds(), m.triangles.iter().map(|t| t.v).collect()))
                .collect(),
        }
    }

    fn blocks(&self, origin: Vec3, dir: Vec3) -> bool {
        self.meshes.iter().any(|(b, tris)| {
            b.hit_by_ray(origin, dir) && tris.iter().any(|t| ray_hits_triangle(origin, dir, t))
        })
    }
}

/// Möller–Trumbore, double-sided, hits with `t > 0`.
pub fn ray_hits_triangle(origin: Vec3, dir: Vec3, t: &[Vec3; 3]) -> bool {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - t[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(q) * inv > 1e-9
}

/// 1 when `point` sees the sun, 0 when any triangle blocks the ray.
pub fn shadow(scene: &Scene, point: Vec3, sun_dir: Vec3) -> u8 {
    let occ = Occluders::new(&scene.meshes());
    u8::from(!occ.blocks(point + sun_dir * SHADOW_EPSILON, sun_dir))
}

fn is_ground(class: u8) -> bool {
    matches!(class, classes::ROAD | classes::GROUND | classes::SIDEWALK)
}

#[cfg(feature = "parallel")]
fn rows_mut<T: Send, F>(buf: &mut [T], width: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    buf.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

#[cfg(not(feature = "parallel"))]
fn rows_mut<T: Send, F>(buf: &mut [T], width: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    buf.chunks_mut(width).enumerate().for_each(|(y, row)| f(y, row));
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    rgb: [u8; 3],
    depth: f64,
    instance: InstancePixel,
}

/// Renders `scene` as seen by `camera`.
///
/// `rain` supplies streak positions when `light.precipitation > 0`; pass a
/// frame-keyed stream so reruns are identical.
pub fn render(
    scene: &Scene,
    camera: &Camera,
    light: &LightModel,
    rain: SplitMix64,
) -> FrameBundle {
    let meshes = scene.meshes();
    let (rgb, depth, instance) = rasterize(&meshes, camera, Some((light, rain)));
    FrameBundle {
        rgb,
        depth,
        instance,
        frame_index: scene.frame_index,
        sensor_index: 0,
        camera: *camera,
    }
}

/// Depth and instance planes only. The RGB image is left black.
pub fn render_geometry(scene: &Scene, camera: &Camera) -> FrameBundle {
    let meshes = scene.meshes();
    let (rgb, depth, instance) = rasterize(&meshes, camera, None);
    FrameBundle {
        rgb,
        depth,
        instance,
        frame_index: scene.frame_index,
        sensor_index: 0,
        camera: *camera,
    }
}

fn rasterize(
    meshes: &[Mesh],
    camera: &Camera,
    shading: Option<(&LightModel, SplitMix64)>,
) -> (RgbImage, Vec<f64>, InstancePlane) {
    let flat = LightModel::ambient_only(1.0);
    let (light, rain) = match shading {
        Some((l, r)) => (l, Some(r)),
        None => (&flat, None),
    };
    let k: CameraIntrinsics = camera.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let tris = prepare(meshes, camera);
    let occluders = Occluders::new(meshes);
    let sky_w = light.fog_weight(FAR);
    let sky = std::array::from_fn::<u8, 3, _>(|c| {
        to_u8(light.sky_color[c] * (1.0 - sky_w) + light.fog_color[c] * sky_w)
    });
    let cam_pos = camera.position();
    let sun_up = light.diffuse > 0.0;

    let mut samples = vec![
        Sample {
            rgb: sky,
            depth: FAR,
            instance: InstancePixel::BACKGROUND,
        };
        w * h
    ];
    rows_mut(&mut samples, w, |y, row| {
        let py = y as f64 + 0.5;
        let yi = y as i64;
        let mut zbuf = vec![FAR; w];
        let mut winner: Vec<Option<(usize, [f64; 3])>> = vec![None; w];
        for (ti, t) in tris.iter().enumerate() {
            if yi < t.y_range.0 || yi > t.y_range.1 {
                continue;
            }
            let Some((x0, x1)) = t.row_span(py) else {
                continue;
            };
            for x in x0..=x1 {
                let xi = x as usize;
                let Some(b) = t.barycentric(x as f64 + 0.5, py) else {
                    continue;
                };
                let d = t.depth_at(b);
                if d < zbuf[xi] && d > NEAR_PLANE {
                    zbuf[xi] = d;
                    winner[xi] = Some((ti, b));
                }
            }
        }
        for (x, slot) in row.iter_mut().enumerate() {
            let Some((ti, b)) = winner[x] else { continue };
            let t = &tris[ti];
            let mesh = &meshes[t.mesh];
            let instance = InstancePixel {
                semantic_class: mesh.semantic_class,
                instance_id: mesh.instance_id,
            };
            if rain.is_none() {
                *slot = Sample {
                    rgb: [0; 3],
                    depth: zbuf[x],
                    instance,
                };
                continue;
            }
            let lw = t.perspective_weights(b);
            let world = t.world[0] * lw[0] + t.world[1] * lw[1] + t.world[2] * lw[2];
            let mut albedo = match &mesh.albedo {
                Albedo::Flat(c) => c.map(f64::from),
                Albedo::Texture(tex) => {
                    let u = t.uv[0][0] * lw[0] + t.uv[1][0] * lw[1] + t.uv[2][0] * lw[2];
                    let v = t.uv[0][1] * lw[0] + t.uv[1][1] * lw[1] + t.uv[2][1] * lw[2];
                    sample_bilinear(tex, u, v)
                }
            };
            if is_ground(mesh.semantic_class) {
                albedo = albedo.map(|a| a * light.ground_albedo_scale);
            }
            let mut n = t.normal;
            if n.dot(cam_pos - world) < 0.0 {
                n = -n;
            }
            let ndotl = n.dot(light.sun_dir).max(0.0);
            let lit_sun = if sun_up && ndotl > 0.0 {
                let origin = world + light.sun_dir * SHADOW_EPSILON;
                if occluders.blocks(origin, light.sun_dir) {
                    0.0
                } else {
                    light.diffuse * ndotl
                }
            } else {
                0.0
            };
            let gain = light.ambient + lit_sun;
            let depth = zbuf[x];
            let fw = light.fog_weight(depth);
            *slot = Sample {
                rgb: std::array::from_fn(|c| {
                    to_u8(albedo[c] * gain * (1.0 - fw) + light.fog_color[c] * fw)
                }),
                depth,
                instance,
            };
        }
    });

    let mut rgb = RgbImage::new(k.width, k.height);
    let mut depth = Vec::with_capacity(w * h);
    let mut instance = InstancePlane::new(k.width, k.height);
    for (i, (s, px)) in samples.iter().zip(rgb.pixels_mut()).enumerate() {
        px.0 = s.rgb;
        depth.push(s.depth);
        instance.data[i] = s.instance;
    }
    match rain {
        Some(rain) if light.precipitation > 0.0 => draw_rain(&mut rgb, light.precipitation, rain),
        Some(_) => {}
        None => rgb.fill(0),
    }
    (rgb, depth, instance)
}

/// Short slanted streaks, `round(3·p)` per 100x100 tile, blended toward
/// [`light::RAIN_COLOR`] with bilinear splatting along each segment.
fn draw_rain(rgb: &mut RgbImage, precipitation: f64, mut rng: SplitMix64) {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let per_tile = (precipitation * light::RAIN_STREAKS_PER_PERCENT).round() as usize;
    if per_tile == 0 {
        return;
    }
    let mut alpha = vec![0f32; w * h];
    let tile = 100usize;
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            for _ in 0..per_tile {
                let x = tx as f64 + rng.next_f64() * tile as f64;
                let y = ty as f64 + rng.next_f64() * tile as f64;
                let len = 6.0 + 8.0 * rng.next_f64();
                let (dx, dy) = (0.2 * len, len);
                let steps = (len * 2.0).ceil() as usize;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let (sx, sy) = (x + dx * t - 0.5, y + dy * t - 0.5);
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    for (ox, oy, wgt) in [
                        (0, 0, (1.0 - fx) * (1.0 - fy)),
                        (1, 0, fx * (1.0 - fy)),
                        (0, 1, (1.0 - fx) * fy),
                        (1, 1, fx * fy),
                    ] {
                        let (px, py) = (x0 as i64 + ox, y0 as i64 + oy);
                        if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                            continue;
                        }
                        let a = &mut alpha[py as usize * w + px as usize];
                        *a = a.max(wgt as f32);
                    }
                }
            }
        }
    }
    for (px, &a) in rgb.pixels_mut().zip(&alpha) {
        if a > 0.0 {
            let k = f64::from(a) * light::RAIN_OPACITY;
            for c in 0..3 {
                px.0[c] = to_u8(f64::from(px.0[c]) * (1.0 - k) + light::RAIN_COLOR[c] * k);
            }
        }
    }
}
