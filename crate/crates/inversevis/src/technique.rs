//! Indirect viewing techniques: how pixels whose primary ray misses the
//! surface acquire samples from the occluded backside.
//!
//! Three families share one interface:
//!
//! * **Ring projection** — an annulus of pixels around the silhouette is fed
//!   by rays cast outward from the mesh center, tilted progressively from the
//!   camera side (inner rim) to the far side (outer rim).
//! * **Quadratic mirror** — a height-field mirror placed behind the mesh;
//!   a missed primary ray hits the mirror and continues along the mirror's
//!   surface normal (not the optical reflection, which keeps the map simple
//!   and optimizable), picking up back-surface hits.
//! * **Curved rays** — missed rays re-enter at the farthest crossing of the
//!   offset shell {φ = φ₀} and bend through the distance field with seed
//!   strength α (see [`crate::trace`]).

use serde_json::json;

use crate::camera::{Camera, Ray};
use crate::error::Result;
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::sdf::{SdfGrid, SurfacePoint};
use crate::trace::{
    curved_trace, farthest_hull_hit, seed_direction, sphere_trace, CurvedTrajectory, Terminal,
    TraceConfig,
};

/// Default offset-shell level for curved rays.
pub const DEFAULT_PHI0: f64 = 0.4;
/// Default seed strength for curved rays.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Half-extent of the mirror's parameter square, local units.
pub const MIRROR_HALF_EXTENT: f64 = 2.0;
/// The mirror sits at √3 (the far corner of the normalized mesh box) plus
/// this along the look direction, safely outside the tracing domain.
pub const DEFAULT_MIRROR_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Technique {
    /// Straight rays only.
    Direct,
    /// Ring projection from `center` between silhouette radius `r1` and
    /// image-edge radius `r2` (both in NDC units).
    Neugebauer { center: Vec3, r1: f64, r2: f64 },
    /// Quadratic mirror z = ω₁x² + ω₂y² + ω₃xy + ω₄x + ω₅y behind the mesh.
    Mirror { omega: [f64; 5], offset: f64 },
    /// Field-bent rays with seed strength `alpha` from the shell {φ = phi0}.
    InverseVis { alpha: f64, phi0: f64 },
}

/// Ring projection sized for a normalized mesh: ray origin at the world
/// center, inner radius at the mesh silhouette, outer radius at the NDC rim.
/// Boxy meshes keep corners out past the frame even after normalization
/// (up to √3 on the unit cube), which would push the silhouette radius past
/// the rim; the inner radius is capped below it so an annulus always
/// remains. An inner radius inside the silhouette costs nothing — ring rays
/// are only cast for pixels whose primary ray already missed.
pub fn neugebauer_for(mesh: &Mesh) -> Technique {
    const INNER_CAP: f64 = 0.9;
    Technique::Neugebauer {
        center: Vec3::zeros(),
        r1: (mesh.bounding_radius() / crate::camera::ORTHO_HALF_EXTENT).min(INNER_CAP),
        r2: 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceHit {
    /// Tracer position at the hit.
    pub raw: Vec3,
    /// Voxel-payload snap onto the mesh.
    pub surface: SurfacePoint,
}

impl Technique {
    pub fn name(&self) -> &'static str {
        match self {
            Technique::Direct => "direct",
            Technique::Neugebauer { .. } => "neugebauer",
            Technique::Mirror { .. } => "mirror",
            Technique::InverseVis { .. } => "inversevis",
        }
    }

    /// Technique parameters for reports.
    pub fn params_json(&self) -> serde_json::Value {
        match self {
            Technique::Direct => json!({}),
            Technique::Neugebauer { center, r1, r2 } => {
                json!({ "center": [center.x, center.y, center.z], "r1": r1, "r2": r2 })
            }
            Technique::Mirror { omega, offset } => json!({ "omega": omega, "offset": offset }),
            Technique::InverseVis { alpha, phi0 } => json!({ "alpha": alpha, "phi0": phi0 }),
        }
    }

    /// Resolve the indirect sample for a pixel whose primary ray missed.
    pub fn indirect_hit(
        &self,
        grid: &SdfGrid,
        mesh: &Mesh,
        cam: &Camera,
        px: usize,
        py: usize,
        cfg: &TraceConfig,
    ) -> Result<Option<SurfaceHit>> {
        match self {
            Technique::Direct => Ok(None),
            Technique::Neugebauer { center, r1, r2 } => {
                match ring_ray(cam, px, py, *center, *r1, *r2) {
                    None => Ok(None),
                    Some(ray) => hit_of(sphere_trace(grid, mesh, &ray, cfg)?),
                }
            }
            Technique::Mirror { omega, offset } => {
                let frame = MirrorFrame::new(cam, *omega, *offset);
                match frame.intersect(&cam.pixel_ray(px, py)) {
                    None => Ok(None),
                    Some((point, normal)) => {
                        let secondary = Ray { origin: point, dir: normal };
                        hit_of(sphere_trace(grid, mesh, &secondary, cfg)?)
                    }
                }
            }
            Technique::InverseVis { alpha, phi0 } => {
                Ok(inversevis_traced(grid, mesh, cam, px, py, *alpha, *phi0, cfg, false)?
                    .map(|(hit, _, _)| hit))
            }
        }
    }
}

fn hit_of(terminal: Terminal) -> Result<Option<SurfaceHit>> {
    Ok(match terminal {
        Terminal::Hit { raw, surface } => Some(SurfaceHit { raw, surface }),
        _ => None,
    })
}

/// The ring-projection ray for a pixel, or `None` outside the annulus.
///
/// The pixel's offset from the projected center (NDC) gives a world radial
/// direction in the image plane; the ray leaves `center` along that radial,
/// tilted toward the camera at the inner rim and away at the outer rim:
/// blend = 2r/(r1+r2) - 1.
pub fn ring_ray(cam: &Camera, px: usize, py: usize, center: Vec3, r1: f64, r2: f64) -> Option<Ray> {
    let (cx, cy) = cam.project_ndc(center)?;
    let (x, y) = cam.pixel_ndc(px, py);
    let (dx, dy) = (x - cx, y - cy);
    let r = (dx * dx + dy * dy).sqrt();
    if !(r1..=r2).contains(&r) || r < 1e-12 {
        return None;
    }
    let radial = (cam.right * dx + cam.up * dy).normalize();
    let blend = 2.0 * r / (r1 + r2) - 1.0;
    Some(Ray { origin: center, dir: (radial + cam.look * blend).normalize() })
}

/// The mirror's local frame and height field.
///
/// Local axes are the camera frame seen from behind the mesh: x = right,
/// y = up, z = -look (pointing from the mirror back toward the mesh). The
/// surface normal has positive local z, so secondary rays always head back
/// into the scene.
#[derive(Debug, Clone)]
pub struct MirrorFrame {
    origin: Vec3,
    ex: Vec3,
    ey: Vec3,
    ez: Vec3,
    omega: [f64; 5],
}

impl MirrorFrame {
    pub fn new(cam: &Camera, omega: [f64; 5], offset: f64) -> Self {
        MirrorFrame {
            origin: cam.look * (3f64.sqrt() + offset),
            ex: cam.right,
            ey: cam.up,
            ez: -cam.look,
            omega,
        }
    }

    fn to_local(&self, p: Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.ex), d.dot(&self.ey), d.dot(&self.ez))
    }

    fn dir_to_local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(&self.ex), v.dot(&self.ey), v.dot(&self.ez))
    }

    fn dir_to_world(&self, v: Vec3) -> Vec3 {
        self.ex * v.x + self.ey * v.y + self.ez * v.z
    }

    /// Height of the mirror surface above the local xy plane.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let [w1, w2, w3, w4, w5] = self.omega;
        w1 * x * x + w2 * y * y + w3 * x * y + w4 * x + w5 * y
    }

    /// Unnormalized surface normal in local coordinates, +z side.
    pub fn normal_local(&self, x: f64, y: f64) -> Vec3 {
        let [w1, w2, w3, w4, w5] = self.omega;
        Vec3::new(-(2.0 * w1 * x + w3 * y + w4), -(2.0 * w2 * y + w3 * x + w5), 1.0)
    }

    /// First crossing of the ray with the height field inside the mirror's
    /// parameter square: marched in the local frame, then bisected. Returns
    /// the world-space point and unit normal.
    pub fn intersect(&self, ray: &Ray) -> Option<(Vec3, Vec3)> {
        let lo = self.to_local(ray.origin);
        let ld = self.dir_to_local(ray.dir);
        let [w1, w2, w3, w4, w5] = self.omega;
        let zb = 4.0 * (w1.abs() + w2.abs() + w3.abs()) + 2.0 * (w4.abs() + w5.abs()) + 0.5;

        // Parameter span inside the local box [-2, 2]² × [-zb, zb].
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (o, d, b) in [
            (lo.x, ld.x, MIRROR_HALF_EXTENT),
            (lo.y, ld.y, MIRROR_HALF_EXTENT),
            (lo.z, ld.z, zb),
        ] {
            if d.abs() < 1e-15 {
                if o.abs() > b {
                    return None;
                }
            } else {
                let (ta, tb) = ((-b - o) / d, (b - o) / d);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t0 > t1 || t1 < 0.0 {
            return None;
        }
        t0 = t0.max(0.0);

        let f = |t: f64| {
            let p = lo + ld * t;
            p.z - self.height(p.x, p.y)
        };
        const MARCH_STEPS: usize = 400;
        let dt = (t1 - t0) / MARCH_STEPS as f64;
        let mut prev_t = t0;
        let mut prev_f = f(t0);
        let mut bracket = None;
        for i in 1..=MARCH_STEPS {
            let t = t0 + dt * i as f64;
            let ft = f(t);
            if prev_f > 0.0 && ft <= 0.0 {
                bracket = Some((prev_t, t));
                break;
            }
            prev_t = t;
            prev_f = ft;
        }
        let (mut ta, mut tb) = bracket?;
        for _ in 0..30 {
            let tm = 0.5 * (ta + tb);
            if f(tm) > 0.0 {
                ta = tm;
            } else {
                tb = tm;
            }
        }
        let t = 0.5 * (ta + tb);
        let p = lo + ld * t;
        let n = self.dir_to_world(self.normal_local(p.x, p.y)).normalize();
        Some((ray.origin + ray.dir * t, n))
    }
}

/// Curved-ray resolution for one pixel, keeping the trajectory and the seed
/// sensitivity ∂v₀/∂α (the unscaled tangential double cross) for gradient
/// work. `None` when the ray misses the shell or the trace dies.
#[allow(clippy::too_many_arguments)]
pub fn inversevis_traced(
    grid: &SdfGrid,
    mesh: &Mesh,
    cam: &Camera,
    px: usize,
    py: usize,
    alpha: f64,
    phi0: f64,
    cfg: &TraceConfig,
    record_jacobians: bool,
) -> Result<Option<(SurfaceHit, CurvedTrajectory, Vec3)>> {
    let ray = cam.pixel_ray(px, py);
    let Some(start) = farthest_hull_hit(grid, &ray, phi0, cfg) else {
        return Ok(None);
    };
    let dv0_dalpha = seed_direction(grid, start, ray.dir);
    let traj = curved_trace(grid, mesh, start, dv0_dalpha * alpha, cfg, record_jacobians)?;
    match &traj.terminal {
        Terminal::Hit { raw, surface } => {
            let hit = SurfaceHit { raw: *raw, surface: surface.clone() };
            Ok(Some((hit, traj, dv0_dalpha)))
        }
        _ => Ok(None),
    }
}
