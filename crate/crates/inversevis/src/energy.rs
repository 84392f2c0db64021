//! Image energy and voxel-level visibility accounting.
//!
//! A rendered frame is scored by integrating the importance of what its
//! pixels see:
//!
//! ```text
//! E = γ · Σ_direct s·ΔA  +  Σ_indirect s·ΔA,      ΔA = 4/(W·H)
//! ```
//!
//! where s is the importance at the pixel's surface sample and γ < 1
//! de-emphasizes the directly visible front. For the visibility importance,
//! s is 1 exactly when the hit reaches at least one not-yet-visited surface
//! voxel, so re-seeing the same patch adds nothing and the energy pushes
//! rays toward unseen territory.

use serde::Serialize;

use crate::camera::PixelClass;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{ImportanceField, Mesh};
use crate::sdf::{SdfGrid, GRID_MAX, GRID_MIN};
use crate::technique::SurfaceHit;

/// Per-pixel outcome of a render: classification plus the surface sample for
/// pixels that saw anything.
#[derive(Debug, Clone)]
pub struct RenderFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major, length width·height.
    pub classes: Vec<PixelClass>,
    pub hits: Vec<Option<SurfaceHit>>,
}

impl RenderFrame {
    /// NDC area of one pixel: the image spans [-1, 1]².
    pub fn pixel_area(&self) -> f64 {
        4.0 / (self.width as f64 * self.height as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Census {
    pub direct: usize,
    pub indirect: usize,
    pub none: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    /// Σ s·ΔA over direct pixels, before the γ weight.
    pub direct_term: f64,
    /// Σ s·ΔA over indirect pixels.
    pub indirect_term: f64,
    pub gamma: f64,
    /// γ·direct_term + indirect_term.
    pub total: f64,
    /// Mean raw importance over hit pixels (no visibility dedupe).
    pub mean_scalar: f64,
    pub census: Census,
}

/// Occupancy grid over the same domain as the distance grid: which voxels
/// hold surface (marked) and which of those have been reached (visited).
#[derive(Debug, Clone)]
pub struct VisibilityGrid {
    resolution: usize,
    marked: Vec<bool>,
    visited: Vec<bool>,
    marked_count: usize,
    visited_count: usize,
}

impl VisibilityGrid {
    /// Mark voxels whose center lies strictly within one voxel edge of the
    /// surface, |φ| < e, read from the distance grid.
    pub fn mark_from(grid: &SdfGrid, resolution: usize) -> Result<VisibilityGrid> {
        let edge = (GRID_MAX - GRID_MIN) / resolution as f64;
        let mut marked = vec![false; resolution * resolution * resolution];
        let mut idx = 0;
        for i in 0..resolution {
            for j in 0..resolution {
                for k in 0..resolution {
                    let c = Vec3::new(
                        GRID_MIN + (i as f64 + 0.5) * edge,
                        GRID_MIN + (j as f64 + 0.5) * edge,
                        GRID_MIN + (k as f64 + 0.5) * edge,
                    );
                    marked[idx] = grid.sample_distance(c).value.abs() < edge;
                    idx += 1;
                }
            }
        }
        Self::from_marked(resolution, marked)
    }

    /// Wrap a precomputed marking. Errors when nothing is marked, since
    /// every visibility ratio would be 0/0.
    pub fn from_marked(resolution: usize, marked: Vec<bool>) -> Result<VisibilityGrid> {
        if marked.len() != resolution * resolution * resolution {
            return Err(Error::config(format!(
                "marking length {} does not match resolution {resolution}³",
                marked.len()
            )));
        }
        let marked_count = marked.iter().filter(|&&m| m).count();
        if marked_count == 0 {
            return Err(Error::numeric("no voxels marked: surface band is empty"));
        }
        let visited = vec![false; marked.len()];
        Ok(VisibilityGrid { resolution, marked, visited, marked_count, visited_count: 0 })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn voxel_edge(&self) -> f64 {
        (GRID_MAX - GRID_MIN) / self.resolution as f64
    }

    pub fn marked_count(&self) -> usize {
        self.marked_count
    }

    pub fn visited_count(&self) -> usize {
        self.visited_count
    }

    /// Fraction of marked voxels visited so far.
    pub fn ratio(&self) -> f64 {
        self.visited_count as f64 / self.marked_count as f64
    }

    pub fn reset_visited(&mut self) {
        self.visited.iter_mut().for_each(|v| *v = false);
        self.visited_count = 0;
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn is_marked(&self, i: usize, j: usize, k: usize) -> bool {
        self.marked[self.index(i, j, k)]
    }

    pub fn is_visited(&self, i: usize, j: usize, k: usize) -> bool {
        self.visited[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.voxel_edge();
        Vec3::new(
            GRID_MIN + (i as f64 + 0.5) * e,
            GRID_MIN + (j as f64 + 0.5) * e,
            GRID_MIN + (k as f64 + 0.5) * e,
        )
    }

    /// Record a surface hit at `p`: every marked voxel whose center lies
    /// within one voxel edge of `p` in Chebyshev distance (the corners of
    /// the interpolation cell around `p`) becomes visited. Returns how many
    /// voxels were newly visited.
    pub fn visit(&mut self, p: Vec3) -> usize {
        let e = self.voxel_edge();
        let max = self.resolution as isize - 1;
        let cell = |x: f64| (((x - GRID_MIN) / e).floor() as isize).clamp(0, max);
        let (ci, cj, ck) = (cell(p.x), cell(p.y), cell(p.z));
        let mut newly = 0;
        for i in (ci - 1).max(0)..=(ci + 1).min(max) {
            for j in (cj - 1).max(0)..=(cj + 1).min(max) {
                for k in (ck - 1).max(0)..=(ck + 1).min(max) {
                    let (i, j, k) = (i as usize, j as usize, k as usize);
                    let idx = self.index(i, j, k);
                    if !self.marked[idx] || self.visited[idx] {
                        continue;
                    }
                    let c = self.voxel_center(i, j, k);
                    let cheb = (c.x - p.x).abs().max((c.y - p.y).abs()).max((c.z - p.z).abs());
                    if cheb <= e {
                        self.visited[idx] = true;
                        newly += 1;
                    }
                }
            }
        }
        self.visited_count += newly;
        newly
    }
}

/// Score a frame. Pixels are consumed in row-major order, so the visibility
/// dedupe (and therefore the energy) is deterministic for a given frame.
///
/// When a visibility grid is supplied, every hit also visits it — that is
/// how cross-render coverage accumulates. The `Visibility` importance
/// requires one (its s values are defined by the dedupe).
pub fn energy(
    frame: &RenderFrame,
    mesh: &Mesh,
    importance: &ImportanceField,
    gamma: f64,
    mut vis: Option<&mut VisibilityGrid>,
) -> Result<EnergyReport> {
    importance.validate(mesh)?;
    if matches!(importance, ImportanceField::Visibility) && vis.is_none() {
        return Err(Error::config("visibility importance needs a visibility grid"));
    }

    let da = frame.pixel_area();
    let mut census = Census { direct: 0, indirect: 0, none: 0 };
    let mut direct_term = 0.0;
    let mut indirect_term = 0.0;
    let mut raw_sum = 0.0;
    let mut hit_count = 0usize;

    for (class, hit) in frame.classes.iter().zip(&frame.hits) {
        let bucket = match class {
            PixelClass::Direct => &mut census.direct,
            PixelClass::Indirect => &mut census.indirect,
            PixelClass::Background => &mut census.none,
        };
        *bucket += 1;

        let Some(hit) = hit else {
            continue;
        };
        hit_count += 1;

        let raw = importance.value(mesh, hit.surface.triangle, hit.surface.bary)?;
        raw_sum += raw;

        let newly = vis.as_deref_mut().map(|v| v.visit(hit.raw)).unwrap_or(0);
        let s = match importance {
            ImportanceField::Visibility => (newly > 0) as u8 as f64,
            _ => raw,
        };
        match class {
            PixelClass::Direct => direct_term += s * da,
            PixelClass::Indirect => indirect_term += s * da,
            PixelClass::Background => {}
        }
    }

    let mean_scalar = if hit_count > 0 { raw_sum / hit_count as f64 } else { 0.0 };
    Ok(EnergyReport {
        direct_term,
        indirect_term,
        gamma,
        total: gamma * direct_term + indirect_term,
        mean_scalar,
        census,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::{SdfGrid, SurfacePoint};
    use crate::shapes;

    /// A mesh whose every interpolated scalar is exactly 1.
    fn unit_mesh() -> Mesh {
        Mesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
            scalars: vec![1.0; 3],
        }
    }

    fn hit_at(p: Vec3) -> Option<SurfaceHit> {
        Some(SurfaceHit {
            raw: p,
            surface: SurfacePoint {
                position: p,
                triangle: 0,
                bary: [1.0, 0.0, 0.0],
                scalar: 1.0,
            },
        })
    }

    fn uniform_frame(n: usize, class: PixelClass, hit: Option<SurfaceHit>) -> RenderFrame {
        RenderFrame {
            width: n,
            height: n,
            classes: vec![class; n * n],
            hits: (0..n * n).map(|_| hit.clone()).collect(),
        }
    }

    #[test]
    fn full_direct_frame_of_ones_integrates_to_four() {
        let mesh = unit_mesh();
        let frame = uniform_frame(10, PixelClass::Direct, hit_at(Vec3::zeros()));
        let e = energy(&frame, &mesh, &ImportanceField::Scalar, 0.25, None).unwrap();
        assert!((e.direct_term - 4.0).abs() < 1e-12);
        assert_eq!(e.indirect_term, 0.0);
        assert!((e.total - 1.0).abs() < 1e-12, "gamma-weighted total {}", e.total);
        assert!((e.mean_scalar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_weights_only_the_direct_term() {
        let mesh = unit_mesh();
        let n = 4;
        let mut frame = uniform_frame(n, PixelClass::Direct, hit_at(Vec3::zeros()));
        // Second half of the pixels becomes indirect.
        for i in n * n / 2..n * n {
            frame.classes[i] = PixelClass::Indirect;
        }
        let e = energy(&frame, &mesh, &ImportanceField::Scalar, 0.25, None).unwrap();
        assert!((e.direct_term - 2.0).abs() < 1e-12);
        assert!((e.indirect_term - 2.0).abs() < 1e-12);
        assert!((e.total - (0.25 * 2.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn census_accounts_for_every_pixel() {
        let mesh = unit_mesh();
        let mut frame = uniform_frame(3, PixelClass::Background, None);
        frame.classes[0] = PixelClass::Direct;
        frame.hits[0] = hit_at(Vec3::zeros());
        frame.classes[1] = PixelClass::Indirect;
        frame.hits[1] = hit_at(Vec3::x());
        let e = energy(&frame, &mesh, &ImportanceField::Scalar, 1.0, None).unwrap();
        assert_eq!(e.census, Census { direct: 1, indirect: 1, none: 7 });
        assert_eq!(e.census.direct + e.census.indirect + e.census.none, 9);
    }

    #[test]
    fn marked_band_matches_the_spherical_shell_estimate() {
        // Voxels within one edge of the surface of a radius-0.8 sphere form
        // a shell of thickness 2e; its volume over e³ predicts the count.
        let mesh = shapes::icosphere(0.8, 3);
        let grid = SdfGrid::build(&mesh, 64).unwrap();
        let vis = VisibilityGrid::mark_from(&grid, 64).unwrap();
        let e = vis.voxel_edge();
        let expect = 4.0 * std::f64::consts::PI / 3.0
            * ((0.8f64 + e).powi(3) - (0.8f64 - e).powi(3))
            / e.powi(3);
        let got = vis.marked_count() as f64;
        assert!(
            (got - expect).abs() < 0.15 * expect,
            "marked {got} vs shell estimate {expect:.0}"
        );
    }

    #[test]
    fn visits_cover_the_interpolation_cell_and_dedupe() {
        let res = 8;
        let mut marked = vec![false; res * res * res];
        let idx = |i: usize, j: usize, k: usize| (i * res + j) * res + k;
        marked[idx(3, 3, 3)] = true;
        marked[idx(4, 3, 3)] = true;
        marked[idx(6, 6, 6)] = true; // far away, never touched
        let mut vis = VisibilityGrid::from_marked(res, marked).unwrap();

        // Exactly at the center of (3,3,3): the neighbor's center is one
        // full edge away, inside the closed Chebyshev ball.
        let p = vis.voxel_center(3, 3, 3);
        assert_eq!(vis.visit(p), 2);
        assert!(vis.is_visited(3, 3, 3) && vis.is_visited(4, 3, 3));
        assert!(!vis.is_visited(6, 6, 6));
        // Re-visiting adds nothing.
        assert_eq!(vis.visit(p), 0);
        assert!((vis.ratio() - 2.0 / 3.0).abs() < 1e-12);

        vis.reset_visited();
        assert_eq!(vis.visited_count(), 0);
    }

    #[test]
    fn empty_marking_is_rejected() {
        let err = VisibilityGrid::from_marked(4, vec![false; 64]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let err = VisibilityGrid::from_marked(4, vec![true; 3]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn visited_count_grows_monotonically_and_stays_bounded() {
        let mesh = shapes::icosphere(0.8, 2);
        let grid = SdfGrid::build(&mesh, 32).unwrap();
        let mut vis = VisibilityGrid::mark_from(&grid, 32).unwrap();
        let mut prev = 0;
        for i in 0..200 {
            let t = i as f64 * 0.37;
            let p = Vec3::new(t.sin(), t.cos(), (t * 0.7).sin()) * 0.8;
            vis.visit(p);
            assert!(vis.visited_count() >= prev);
            prev = vis.visited_count();
        }
        assert!(vis.visited_count() <= vis.marked_count());
        assert!(vis.ratio() <= 1.0);
    }

    #[test]
    fn visibility_energy_rewards_only_new_voxels() {
        let res = 8;
        let mut marked = vec![false; res * res * res];
        marked[(3 * res + 3) * res + 3] = true;
        let mut vis = VisibilityGrid::from_marked(res, marked).unwrap();
        let p = vis.voxel_center(3, 3, 3);

        let mesh = unit_mesh();
        let mut frame = uniform_frame(2, PixelClass::Background, None);
        frame.classes[0] = PixelClass::Indirect;
        frame.hits[0] = hit_at(p);
        frame.classes[1] = PixelClass::Indirect;
        frame.hits[1] = hit_at(p); // same voxel: deduped to s = 0

        let e =
            energy(&frame, &mesh, &ImportanceField::Visibility, 0.25, Some(&mut vis)).unwrap();
        let da = 4.0 / 4.0;
        assert!((e.indirect_term - da).abs() < 1e-12, "only the first hit scores");
        assert_eq!(e.census.indirect, 2);
        // Raw importance ignores the dedupe.
        assert!((e.mean_scalar - 1.0).abs() < 1e-12);
        assert_eq!(vis.visited_count(), 1);
    }

    #[test]
    fn visibility_importance_requires_a_grid() {
        let mesh = unit_mesh();
        let frame = uniform_frame(2, PixelClass::Direct, hit_at(Vec3::zeros()));
        let err = energy(&frame, &mesh, &ImportanceField::Visibility, 1.0, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
