//! Built-in world layouts.
//!
//! Coordinates are centered on the region used by the reference scenario
//! (around x = -90, y = 160), so its spawn points land on open ground.

use super::{classes, Albedo, Mesh};
use crate::geometry::Vec3;

pub struct Layout {
    pub name: &'static str,
    pub description: &'static str,
    pub build: fn() -> Vec<Mesh>,
}

pub const LAYOUT_NAMES: [&str; 2] = ["Town10HD", "Plaza"];

const LAYOUTS: [Layout; 2] = [
    Layout {
        name: "Town10HD",
        description: "street with a long wall facing the sidewalk and buildings behind it",
        build: street_with_wall,
    },
    Layout {
        name: "Plaza",
        description: "open paved plaza with a few pillars and a fountain",
        build: open_plaza,
    },
];

pub fn layout_by_name(name: &str) -> Option<&'static Layout> {
    LAYOUTS.iter().find(|l| l.name == name)
}

fn ground(albedo: [u8; 3], class: u8) -> Mesh {
    let (x0, x1, y0, y1) = (-400.0, 200.0, -200.0, 500.0);
    Mesh::quad(
        [
            Vec3::new(x0, y0, 0.0),
            Vec3::new(x1, y0, 0.0),
            Vec3::new(x1, y1, 0.0),
            Vec3::new(x0, y1, 0.0),
        ],
        Albedo::Flat(albedo),
        class,
    )
}

fn block(min: [f64; 3], max: [f64; 3], albedo: [u8; 3], class: u8) -> Mesh {
    Mesh::cuboid(
        Vec3::new(min[0], min[1], min[2]),
        Vec3::new(max[0], max[1], max[2]),
        Albedo::Flat(albedo),
        class,
    )
}

/// The wall's camera-facing plane is x = -85.
pub const STREET_WALL_FRONT_X: f64 = -85.0;

fn street_with_wall() -> Vec<Mesh> {
    vec![
        ground([96, 96, 100], classes::ROAD),
        block([-85.0, 130.0, 0.0], [-84.6, 190.0, 4.0], [168, 160, 150], classes::WALL),
        block([-84.6, 128.0, 0.0], [-64.0, 192.0, 14.0], [140, 128, 118], classes::BUILDING),
        block([-80.0, 100.0, 0.0], [-60.0, 128.0, 20.0], [118, 122, 132], classes::BUILDING),
        block([-80.0, 192.0, 0.0], [-60.0, 220.0, 10.0], [132, 118, 104], classes::BUILDING),
        block([-88.1, 143.9, 0.0], [-87.9, 144.1, 5.0], [80, 80, 84], classes::POLE),
    ]
}

fn open_plaza() -> Vec<Mesh> {
    let pillar = |cx: f64, cy: f64| {
        block(
            [cx - 0.5, cy - 0.5, 0.0],
            [cx + 0.5, cy + 0.5, 6.0],
            [190, 186, 176],
            classes::STATIC,
        )
    };
    vec![
        ground([150, 146, 136], classes::GROUND),
        pillar(-80.0, 150.0),
        pillar(-80.0, 170.0),
        pillar(-70.0, 160.0),
        block([-63.0, 157.0, 0.0], [-57.0, 163.0, 1.0], [120, 130, 140], classes::STATIC),
    ]
}
