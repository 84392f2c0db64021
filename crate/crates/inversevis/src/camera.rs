//! Spherical camera and pixel ray generation.
//!
//! The camera sits on a sphere of radius 2.5 around the origin (the grid
//! boundary), parameterized by polar angle θ from +z and azimuth φ, and
//! always looks at the origin. Pixel coordinates map to normalized device
//! coordinates in [-1, 1]² with y up; both orthographic and perspective
//! projections are supported.

use serde::{Deserialize, Serialize};

use crate::math::{spherical_dir, Vec3};

/// Distance from the origin to every camera position.
pub const CAMERA_RADIUS: f64 = 2.5;

/// Half of the image plane in world units for the orthographic projection;
/// meshes are normalized into [-1, 1]³, so 1.25 leaves a margin.
pub const ORTHO_HALF_EXTENT: f64 = 1.25;

/// Vertical field of view of the perspective projection, radians.
pub const PERSPECTIVE_FOV_Y: f64 = 45.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Orthographic,
    Perspective,
}

/// How a pixel's primary ray resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelClass {
    /// The straight ray hit the surface.
    Direct,
    /// The straight ray missed, and the technique's indirect ray hit.
    Indirect,
    /// Nothing hit.
    Background,
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

#[derive(Debug, Clone)]
pub struct Camera {
    pub position: Vec3,
    pub look: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub projection: Projection,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at polar angle `theta` from +z and azimuth `phi`, looking at
    /// the origin. The frame is right = look × ẑ (falling back to +x̂ at the
    /// poles where that degenerates) and up = right × look.
    pub fn new(theta: f64, phi: f64, projection: Projection, width: usize, height: usize) -> Self {
        let position = spherical_dir(theta, phi) * CAMERA_RADIUS;
        let look = -position.normalize();
        let cross = look.cross(&Vec3::z());
        let right = if cross.norm() < 1e-9 { Vec3::x() } else { cross.normalize() };
        let up = right.cross(&look);
        Camera { position, look, right, up, projection, width, height }
    }

    fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Center of pixel (px, py) in normalized device coordinates, y up.
    pub fn pixel_ndc(&self, px: usize, py: usize) -> (f64, f64) {
        let x = (px as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let y = 1.0 - (py as f64 + 0.5) / self.height as f64 * 2.0;
        (x, y)
    }

    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        let (x, y) = self.pixel_ndc(px, py);
        match self.projection {
            Projection::Orthographic => Ray {
                origin: self.position
                    + self.right * (x * ORTHO_HALF_EXTENT * self.aspect())
                    + self.up * (y * ORTHO_HALF_EXTENT),
                dir: self.look,
            },
            Projection::Perspective => {
                let t = (PERSPECTIVE_FOV_Y * 0.5).tan();
                Ray {
                    origin: self.position,
                    dir: (self.look + self.right * (x * t * self.aspect()) + self.up * (y * t))
                        .normalize(),
                }
            }
        }
    }

    /// Project a world point to normalized device coordinates. `None` when
    /// the point is on or behind the camera plane (perspective only).
    pub fn project_ndc(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = p - self.position;
        match self.projection {
            Projection::Orthographic => Some((
                d.dot(&self.right) / (ORTHO_HALF_EXTENT * self.aspect()),
                d.dot(&self.up) / ORTHO_HALF_EXTENT,
            )),
            Projection::Perspective => {
                let z = d.dot(&self.look);
                if z <= 1e-12 {
                    return None;
                }
                let t = (PERSPECTIVE_FOV_Y * 0.5).tan();
                Some((d.dot(&self.right) / (z * t * self.aspect()), d.dot(&self.up) / (z * t)))
            }
        }
    }
}
