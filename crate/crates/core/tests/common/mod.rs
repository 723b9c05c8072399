#![allow(dead_code)]

use image::{Rgb, RgbImage};
use patchsim::config::{parse_scenario, JitterMotion, MotionSpec, PatchSpec, ScenarioConfig, REFERENCE_SCENARIO};
use patchsim::geometry::{Rotator, Transform, Vec3};
use patchsim::rng::SplitMix64;
use patchsim::scene::layouts::STREET_WALL_FRONT_X;

pub fn reference() -> ScenarioConfig {
    parse_scenario(REFERENCE_SCENARIO).unwrap().config
}

/// Reference scenario with a square placeholder on the wall, centered in
/// front of the sensors and facing them.
pub fn with_wall_patch(mut c: ScenarioConfig, size: f64) -> ScenarioConfig {
    c.patches.push(PatchSpec {
        name: "wall".into(),
        transform: Transform::new(
            Vec3::new(STREET_WALL_FRONT_X - 0.02, 160.0, 1.6),
            Rotator::new(0.0, 180.0, 0.0),
        ),
        width: size,
        height: size,
        texture: None,
    });
    c
}

pub fn with_jitter(mut c: ScenarioConfig, location: f64, degrees: f64) -> ScenarioConfig {
    for s in &mut c.sensors {
        s.motion = Some(MotionSpec {
            linear: None,
            rotation: None,
            jitter: Some(JitterMotion {
                location_range: Vec3::new(location, location, location),
                rotation_range: Rotator::new(degrees, degrees, degrees),
            }),
        });
    }
    c
}

pub fn noise_texture(seed: u64, size: u32) -> RgbImage {
    let mut rng = SplitMix64::stream(seed, "texture");
    RgbImage::from_fn(size, size, |_, _| {
        Rgb([rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8])
    })
}

pub fn solid(c: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(4, 4, Rgb(c))
}
