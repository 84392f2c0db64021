//! Shared fixtures for the acceptance suite.
//!
//! The two res-200 grids are the expensive pieces (about ten seconds for the
//! sphere), so they are built once and shared across every test that needs
//! them.

use std::sync::OnceLock;

use inversevis::math::Vec3;
use inversevis::mesh::Mesh;
use inversevis::sdf::SdfGrid;
use inversevis::shapes;

pub const BOX_HALF: Vec3 = Vec3::new(0.7, 0.5, 0.3);
pub const SPHERE_RADIUS: f64 = 0.8;

pub fn sphere_mesh() -> &'static Mesh {
    static MESH: OnceLock<Mesh> = OnceLock::new();
    MESH.get_or_init(|| shapes::icosphere(SPHERE_RADIUS, 3))
}

pub fn box_mesh() -> &'static Mesh {
    static MESH: OnceLock<Mesh> = OnceLock::new();
    MESH.get_or_init(|| shapes::box_mesh(BOX_HALF))
}

pub fn sphere_grid_200() -> &'static SdfGrid {
    static GRID: OnceLock<SdfGrid> = OnceLock::new();
    GRID.get_or_init(|| SdfGrid::build(sphere_mesh(), 200).expect("sphere grid"))
}

pub fn box_grid_200() -> &'static SdfGrid {
    static GRID: OnceLock<SdfGrid> = OnceLock::new();
    GRID.get_or_init(|| SdfGrid::build(box_mesh(), 200).expect("box grid"))
}

/// Distance from `p` to the sphere of radius `r`, positive outside.
pub fn analytic_sphere(p: Vec3, r: f64) -> f64 {
    p.norm() - r
}

/// Distance from `p` to the box with half-extents `b`, positive outside.
pub fn analytic_box(p: Vec3, b: Vec3) -> f64 {
    let q = Vec3::new(p.x.abs() - b.x, p.y.abs() - b.y, p.z.abs() - b.z);
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    outside + q.x.max(q.y).max(q.z).min(0.0)
}

/// Prints the one-line verdict for a criterion, then fails the test if the
/// check did not hold. The line is printed either way so a red run still
/// shows every criterion's measured value.
pub fn verdict(ok: bool, what: &str, detail: &str) {
    println!("[{}] {what}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{what}: {detail}");
}
