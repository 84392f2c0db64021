//! Straight and curved sphere tracing through the distance grid.
//!
//! Straight rays step by |φ|, which is safe on both sides of the surface
//! (rays can legitimately start inside the mesh, e.g. ring projections cast
//! from the interior). Curved rays integrate the field-bending dynamics
//!
//! ```text
//! dp/dt = φ(p) · v/‖v‖,    dv/dt = -∇φ(p)
//! ```
//!
//! with a symplectic Euler step (velocity first, then position with the
//! fresh velocity). The per-step linearization of that flow is recorded as a
//! 6×6 Jacobian so that parameter perturbations (∂ landing point / ∂ seed
//! strength) can be transported along the trajectory.

use crate::error::{Error, Result};
use crate::math::{expm, Mat6, Vec3, Vec6};
use crate::sdf::{SdfGrid, SurfacePoint};
use crate::{camera::Ray, mesh::Mesh};

#[derive(Debug, Clone)]
pub struct TraceConfig {
    /// |φ| at or below this is a surface hit.
    pub hit_tolerance: f64,
    /// Step budget for curved trajectories.
    pub max_steps: usize,
    /// Step budget for straight rays.
    pub straight_max_steps: usize,
    /// Integrator step h for curved trajectories.
    pub step_size: f64,
    /// Rays beyond this (see `escaped`) are lost to the background.
    pub escape_radius: f64,
    /// A trace stalls when min |φ| fails to improve by `stall_decrease`
    /// for `stall_window` consecutive steps.
    pub stall_window: usize,
    pub stall_decrease: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            hit_tolerance: 1e-3,
            max_steps: 2000,
            straight_max_steps: 512,
            step_size: 0.1,
            escape_radius: 2.4,
            stall_window: 50,
            stall_decrease: 1e-6,
        }
    }
}

/// How a trace ended.
#[derive(Debug, Clone)]
pub enum Terminal {
    /// |φ| reached the hit tolerance. `raw` is the tracer position,
    /// `surface` the voxel-payload snap onto the mesh.
    Hit { raw: Vec3, surface: SurfacePoint },
    /// Left the tracing domain.
    Escaped,
    /// Distance stopped improving (orbiting or grazing).
    Stalled,
    /// Step budget ran out.
    ExhaustedSteps,
}

impl Terminal {
    pub fn hit(&self) -> Option<(&Vec3, &SurfacePoint)> {
        match self {
            Terminal::Hit { raw, surface } => Some((raw, surface)),
            _ => None,
        }
    }
}

/// Tracks the stall rule: min |φ| must keep improving.
struct StallGuard {
    best: f64,
    since: usize,
}

impl StallGuard {
    fn new() -> Self {
        StallGuard { best: f64::INFINITY, since: 0 }
    }

    /// Feed one |φ| observation; true when the trace has stalled.
    fn stalled(&mut self, abs_phi: f64, cfg: &TraceConfig) -> bool {
        if abs_phi < self.best - cfg.stall_decrease {
            self.best = abs_phi;
            self.since = 0;
            false
        } else {
            self.since += 1;
            self.since >= cfg.stall_window
        }
    }
}

/// Parameter span where the ray overlaps the box [-b, b]³, clipped to t ≥ 0.
fn ray_box_span(ray: &Ray, b: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if ray.dir[a].abs() < 1e-15 {
            if ray.origin[a].abs() > b {
                return None;
            }
        } else {
            let mut ta = (-b - ray.origin[a]) / ray.dir[a];
            let mut tb = (b - ray.origin[a]) / ray.dir[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t0 <= t1 && t1 >= 0.0).then_some((t0.max(0.0), t1))
}

fn outside_box(p: Vec3, b: f64) -> bool {
    p.x.abs() > b || p.y.abs() > b || p.z.abs() > b
}

/// Straight-ray escape: outside the tracing box, or beyond the escape radius
/// and receding from the origin.
fn straight_escaped(p: Vec3, dir: Vec3, b: f64) -> bool {
    outside_box(p, b) || (p.norm() > b && p.dot(&dir) > 0.0)
}

/// Sphere trace a straight ray. The origin may be anywhere (it is first
/// advanced to the tracing box), and stepping by |φ| makes interior starts
/// work the same as exterior ones.
pub fn sphere_trace(grid: &SdfGrid, mesh: &Mesh, ray: &Ray, cfg: &TraceConfig) -> Result<Terminal> {
    let Some((t_enter, _)) = ray_box_span(ray, cfg.escape_radius) else {
        return Ok(Terminal::Escaped);
    };
    let mut p = ray.origin + ray.dir * t_enter;
    let mut guard = StallGuard::new();
    for _ in 0..cfg.straight_max_steps {
        let d = grid.sample_distance(p).value;
        if d.abs() <= cfg.hit_tolerance {
            return Ok(Terminal::Hit { raw: p, surface: grid.surface_point(mesh, p)? });
        }
        if guard.stalled(d.abs(), cfg) {
            return Ok(Terminal::Stalled);
        }
        p += ray.dir * d.abs();
        if straight_escaped(p, ray.dir, cfg.escape_radius) {
            return Ok(Terminal::Escaped);
        }
    }
    Ok(Terminal::ExhaustedSteps)
}

/// Whether a straight ray hits the surface at all — for shadow feelers,
/// where the snap payload is not needed.
pub fn occlusion_trace(grid: &SdfGrid, ray: &Ray, cfg: &TraceConfig) -> bool {
    let Some((t_enter, _)) = ray_box_span(ray, cfg.escape_radius) else {
        return false;
    };
    let mut p = ray.origin + ray.dir * t_enter;
    let mut guard = StallGuard::new();
    for _ in 0..cfg.straight_max_steps {
        let d = grid.sample_distance(p).value;
        if d.abs() <= cfg.hit_tolerance {
            return true;
        }
        if guard.stalled(d.abs(), cfg) {
            return false;
        }
        p += ray.dir * d.abs();
        if straight_escaped(p, ray.dir, cfg.escape_radius) {
            return false;
        }
    }
    false
}

/// Farthest crossing of the ray with the offset shell {φ = phi0}.
///
/// Marched backward from the ray's exit point of the tracing box, stepping
/// by ψ = φ - phi0 (a valid unsigned distance bound to the shell, since φ is
/// 1-Lipschitz), so the first crossing found is the farthest one along the
/// forward ray. The crossing is then bracketed and sharpened by bisection.
pub fn farthest_hull_hit(grid: &SdfGrid, ray: &Ray, phi0: f64, cfg: &TraceConfig) -> Option<Vec3> {
    let (t_enter, t_exit) = ray_box_span(ray, cfg.escape_radius)?;
    let at = |t: f64| ray.origin + ray.dir * t;
    let psi = |t: f64| grid.sample_distance(at(t)).value - phi0;

    // Backward march from the exit point; ψ > 0 out there for any shell
    // around a normalized mesh.
    let mut t = t_exit;
    let mut prev = t_exit;
    let mut reached = false;
    for _ in 0..cfg.straight_max_steps {
        let v = psi(t);
        if v <= cfg.hit_tolerance {
            reached = true;
            break;
        }
        prev = t;
        t -= v;
        if t < t_enter {
            return None;
        }
    }
    if !reached {
        return None;
    }

    // Bracket the sign change around t: deeper (smaller t) should go
    // negative; if it never does the ray only grazes the shell and the
    // near-shell point is the best answer available.
    let (mut lo, mut hi);
    if psi(t) < 0.0 {
        (lo, hi) = (t, prev);
    } else {
        let mut delta = cfg.hit_tolerance.max(1e-6);
        loop {
            let probe = t - delta;
            if probe < t_enter {
                return Some(at(t));
            }
            if psi(probe) < 0.0 {
                (lo, hi) = (probe, t);
                break;
            }
            delta *= 2.0;
        }
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if psi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(at(0.5 * (lo + hi)))
}

/// Seed velocity for a curved ray: the view direction projected onto the
/// tangent plane of the field at the start point (g × (r × g)), scaled by
/// the bending strength α.
pub fn seed_velocity(grid: &SdfGrid, start: Vec3, view_dir: Vec3, alpha: f64) -> Vec3 {
    seed_direction(grid, start, view_dir) * alpha
}

/// The unscaled seed double cross g × (r × g); also ∂v₀/∂α.
pub fn seed_direction(grid: &SdfGrid, start: Vec3, view_dir: Vec3) -> Vec3 {
    let g = grid.gradient(start).value;
    g.cross(&view_dir.cross(&g))
}

/// Seed speeds below this switch the integrator to the gradient fall line.
pub const DEGENERATE_SPEED: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CurvedTrajectory {
    /// p_0 .. p_n (n = steps taken).
    pub points: Vec<Vec3>,
    /// v_0 .. v_n; empty in fall-line mode.
    pub velocities: Vec<Vec3>,
    /// J_i evaluated at the start of step i, when recording was requested.
    pub jacobians: Vec<Mat6>,
    pub terminal: Terminal,
    pub path_length: f64,
    /// Integrator step the trajectory was produced with.
    pub step_size: f64,
}

/// Jacobian of the curved-ray dynamics at state (p, v):
///
/// ```text
/// ∂(dp/dt)/∂p = v̂ ∇φᵀ          ∂(dp/dt)/∂v = φ (I/‖v‖ - v vᵀ/‖v‖³)
/// ∂(dv/dt)/∂p = -H_φ            ∂(dv/dt)/∂v = 0
/// ```
pub fn jacobian_at(grid: &SdfGrid, p: Vec3, v: Vec3) -> Result<Mat6> {
    let speed = v.norm();
    if speed <= 1e-8 {
        return Err(Error::numeric(format!("curved-ray Jacobian undefined at speed {speed:e}")));
    }
    let phi = grid.sample_distance(p).value;
    let g = grid.gradient(p).value;
    let h = grid.hessian(p).value;
    let vhat = v / speed;

    let mut j = Mat6::zeros();
    for a in 0..3 {
        for b in 0..3 {
            j[(a, b)] = vhat[a] * g[b];
            j[(a, b + 3)] = phi * ((a == b) as u8 as f64 / speed - v[a] * v[b] / speed.powi(3));
            j[(a + 3, b)] = -h[(a, b)];
        }
    }
    Ok(j)
}

/// Integrate a curved ray from `start` with seed velocity `v0`.
///
/// Sub-degenerate seeds (‖v₀‖ < [`DEGENERATE_SPEED`]) fall down the field
/// gradient instead: dp/dt = -φ ∇φ/‖∇φ‖, which descends |φ| monotonically.
pub fn curved_trace(
    grid: &SdfGrid,
    mesh: &Mesh,
    start: Vec3,
    v0: Vec3,
    cfg: &TraceConfig,
    record_jacobians: bool,
) -> Result<CurvedTrajectory> {
    let fall_line = v0.norm() < DEGENERATE_SPEED;
    let h = cfg.step_size;

    let mut points = vec![start];
    let mut velocities = if fall_line { Vec::new() } else { vec![v0] };
    let mut jacobians = Vec::new();
    let mut path_length = 0.0;
    let mut guard = StallGuard::new();

    let mut p = start;
    let mut v = v0;
    let mut terminal = Terminal::ExhaustedSteps;
    for _ in 0..cfg.max_steps {
        let phi = grid.sample_distance(p).value;
        if phi.abs() <= cfg.hit_tolerance {
            terminal = Terminal::Hit { raw: p, surface: grid.surface_point(mesh, p)? };
            break;
        }
        if p.norm() > cfg.escape_radius {
            terminal = Terminal::Escaped;
            break;
        }
        if guard.stalled(phi.abs(), cfg) {
            terminal = Terminal::Stalled;
            break;
        }

        let next = if fall_line {
            let g = grid.gradient(p).value;
            let norm = g.norm();
            if norm < 1e-12 {
                terminal = Terminal::Stalled;
                break;
            }
            p - g * (h * phi / norm)
        } else {
            if record_jacobians {
                jacobians.push(jacobian_at(grid, p, v)?);
            }
            let g = grid.gradient(p).value;
            v -= g * h;
            let speed = v.norm();
            if speed < 1e-12 {
                return Err(Error::numeric("curved ray velocity collapsed to zero"));
            }
            p + v * (h * phi / speed)
        };

        path_length += (next - p).norm();
        p = next;
        points.push(p);
        if !fall_line {
            velocities.push(v);
        }
    }

    Ok(CurvedTrajectory { points, velocities, jacobians, terminal, path_length, step_size: h })
}

/// How to accumulate the per-step state transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagator {
    /// First-order transition I + h·J per step.
    TaylorProduct,
    /// Full matrix exponential exp(h·J) per step. J is typically defective
    /// (its lower-right block vanishes), so this goes through
    /// scaling-and-squaring rather than an eigendecomposition.
    MatrixExponential,
}

/// Transport a first-order perturbation of the initial state (δp₀, δv₀)
/// along a recorded trajectory, left-multiplying per-step transitions in
/// step order. Requires the trajectory to carry Jacobians.
pub fn propagate_perturbation(
    traj: &CurvedTrajectory,
    d0: Vec6,
    propagator: Propagator,
) -> Result<Vec6> {
    if traj.jacobians.is_empty() && traj.points.len() > 1 {
        return Err(Error::numeric("trajectory carries no Jacobians to propagate through"));
    }
    let h = traj.step_size;
    let mut d = d0;
    for j in &traj.jacobians {
        d = match propagator {
            Propagator::TaylorProduct => d + (j * d) * h,
            Propagator::MatrixExponential => expm(&(j * h)) * d,
        };
    }
    Ok(d)
}

/// Sensitivity of the landing point to the seed strength α: the position
/// part of the transported perturbation (0, ∂v₀/∂α).
pub fn alpha_sensitivity(
    traj: &CurvedTrajectory,
    dv0_dalpha: Vec3,
    propagator: Propagator,
) -> Result<Vec3> {
    let mut d0 = Vec6::zeros();
    for a in 0..3 {
        d0[a + 3] = dv0_dalpha[a];
    }
    let d = propagate_perturbation(traj, d0, propagator)?;
    Ok(Vec3::new(d[0], d[1], d[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Ray;
    use crate::shapes;
    use proptest::prelude::*;

    fn sphere_scene(res: usize) -> (Mesh, SdfGrid) {
        let mesh = shapes::icosphere(0.8, 3);
        let grid = SdfGrid::build(&mesh, res).unwrap();
        (mesh, grid)
    }

    fn down_ray(x: f64) -> Ray {
        Ray { origin: Vec3::new(x, 0.0, 2.5), dir: -Vec3::z() }
    }

    #[test]
    fn hull_crossing_matches_sphere_geometry() {
        // Sphere radius 0.8 with shell offset 0.4: the shell is |p| = 1.2.
        // An axial ray's farthest crossing is z = -1.2; a ray offset by
        // x = 1.0 crosses at z = -sqrt(1.2² - 1²) ≈ -0.66332.
        let (_, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();

        let p = farthest_hull_hit(&grid, &down_ray(0.0), 0.4, &cfg).unwrap();
        assert!((p.z + 1.2).abs() < 0.02, "axial crossing {}", p.z);

        let p = farthest_hull_hit(&grid, &down_ray(1.0), 0.4, &cfg).unwrap();
        assert!((p.z + 0.66332).abs() < 0.02, "offset crossing {}", p.z);

        // Far outside the shell: no crossing.
        assert!(farthest_hull_hit(&grid, &down_ray(2.0), 0.4, &cfg).is_none());
    }

    #[test]
    fn straight_trace_hits_and_misses() {
        let (mesh, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();

        let t = sphere_trace(&grid, &mesh, &down_ray(0.0), &cfg).unwrap();
        let (raw, surface) = t.hit().expect("axial ray must hit");
        assert!((raw.z - 0.8).abs() < 0.02, "hit at z = {}", raw.z);
        assert!((surface.position.norm() - 0.8).abs() < 0.02);

        let t = sphere_trace(&grid, &mesh, &down_ray(2.0), &cfg).unwrap();
        assert!(matches!(t, Terminal::Escaped));
    }

    #[test]
    fn rays_outside_the_box_escape_immediately() {
        let (mesh, grid) = sphere_scene(32);
        let cfg = TraceConfig::default();
        let away = Ray { origin: Vec3::new(0.0, 0.0, 2.45), dir: Vec3::z() };
        assert!(matches!(sphere_trace(&grid, &mesh, &away, &cfg).unwrap(), Terminal::Escaped));
        assert!(!occlusion_trace(&grid, &away, &cfg));
        let toward = down_ray(0.0);
        assert!(occlusion_trace(&grid, &toward, &cfg));
    }

    #[test]
    fn interior_origin_traces_outward_to_the_surface() {
        // Rays cast from inside the mesh must still find the surface: the
        // field is negative there and stepping by |φ| walks out.
        let (mesh, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();
        let ray = Ray { origin: Vec3::zeros(), dir: Vec3::new(0.6, -0.5, 0.2).normalize() };
        let t = sphere_trace(&grid, &mesh, &ray, &cfg).unwrap();
        let (raw, _) = t.hit().expect("interior ray must reach the surface");
        assert!((raw.norm() - 0.8).abs() < 0.02);
    }

    #[test]
    fn fall_line_descends_radially() {
        let (mesh, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();
        let start = Vec3::new(0.3, -0.2, 1.15); // on-ish the 1.2 shell
        let traj = curved_trace(&grid, &mesh, start, Vec3::zeros(), &cfg, false).unwrap();
        let (raw, _) = traj.terminal.hit().expect("fall line must land");
        // The gradient of a radial field points radially: landing direction
        // matches the start direction.
        assert!(raw.normalize().dot(&start.normalize()) > 0.999);
        assert!((raw.norm() - 0.8).abs() < 0.02);
        assert!(traj.velocities.is_empty() && traj.jacobians.is_empty());
    }

    #[test]
    fn moderate_bend_swings_past_the_silhouette() {
        let (mesh, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();
        // Off-axis ray: on the axis itself the view direction is parallel to
        // the gradient and the tangential seed vanishes by construction.
        let ray = down_ray(0.5);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &cfg).unwrap();
        let v0 = seed_velocity(&grid, start, ray.dir, 0.5);
        assert!(v0.norm() >= DEGENERATE_SPEED, "off-axis backside seed is tangential");
        let traj = curved_trace(&grid, &mesh, start, v0, &cfg, false).unwrap();
        let (raw, _) = traj.terminal.hit().expect("moderate bend must land");
        assert!((raw.norm() - 0.8).abs() < 0.03);
        assert!(traj.path_length > 0.0);
    }

    #[test]
    fn exactly_axial_seed_is_degenerate() {
        let (_, grid) = sphere_scene(64);
        let cfg = TraceConfig::default();
        let ray = down_ray(0.0);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &cfg).unwrap();
        // View direction parallel to the gradient: no tangential component.
        assert!(seed_velocity(&grid, start, ray.dir, 0.5).norm() < DEGENERATE_SPEED);
    }

    #[test]
    fn stall_guard_fires_exactly_at_the_window() {
        let cfg = TraceConfig::default();
        let mut guard = StallGuard::new();
        // Strictly improving: never stalls.
        for i in 0..200 {
            assert!(!guard.stalled(1.0 - i as f64 * 1e-3, &cfg));
        }
        // Plateau: fires on the `stall_window`-th non-improving step.
        let mut guard = StallGuard::new();
        assert!(!guard.stalled(0.5, &cfg));
        for i in 1..cfg.stall_window {
            assert!(!guard.stalled(0.5, &cfg), "fired early at {i}");
        }
        assert!(guard.stalled(0.5, &cfg));
        // Drift whose cumulative improvement over a whole window stays below
        // the threshold never resets the counter and stalls on schedule.
        let mut guard = StallGuard::new();
        let mut phi = 0.5;
        assert!(!guard.stalled(phi, &cfg));
        let mut fired = false;
        for _ in 0..cfg.stall_window {
            phi -= cfg.stall_decrease / 100.0;
            fired = guard.stalled(phi, &cfg);
        }
        assert!(fired);
    }

    #[test]
    fn capture_orbits_stall_instead_of_spinning_forever() {
        // In the capture band (seed speed near r·‖∇φ‖/φ) the ray circles the
        // shell without descending, and the stall rule must end it. The band
        // edges hit or escape instead, so sweep a few strengths.
        let (mesh, grid) = sphere_scene(48);
        let cfg = TraceConfig::default();
        let ray = down_ray(0.3);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &cfg).unwrap();
        let mut outcomes = Vec::new();
        let stalled = [4.0, 6.0, 8.0, 12.0, 16.0, 24.0].iter().any(|&alpha| {
            let v0 = seed_velocity(&grid, start, ray.dir, alpha);
            let traj = curved_trace(&grid, &mesh, start, v0, &cfg, false).unwrap();
            let is_stall = matches!(traj.terminal, Terminal::Stalled);
            if is_stall {
                assert!(traj.points.len() - 1 < cfg.max_steps);
            }
            outcomes.push(format!("α={alpha}: {:?}", traj.terminal));
            is_stall
        });
        assert!(stalled, "no capture orbit stalled: {outcomes:?}");
    }

    #[test]
    fn integrator_agrees_with_fine_reference() {
        // The h = 0.1 production step against an h = 0.01 reference of the
        // same dynamics on the same grid: landings within a few voxels.
        let (mesh, grid) = sphere_scene(64);
        let coarse_cfg = TraceConfig::default();
        let fine_cfg = TraceConfig { step_size: 0.01, max_steps: 20_000, ..coarse_cfg.clone() };

        let ray = down_ray(0.2);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &coarse_cfg).unwrap();
        let v0 = seed_velocity(&grid, start, ray.dir, 0.5);

        let coarse = curved_trace(&grid, &mesh, start, v0, &coarse_cfg, false).unwrap();
        let fine = curved_trace(&grid, &mesh, start, v0, &fine_cfg, false).unwrap();
        let (pc, _) = coarse.terminal.hit().expect("coarse landing");
        let (pf, _) = fine.terminal.hit().expect("fine landing");
        assert!(
            (pc - pf).norm() <= 3.0 * grid.voxel_diagonal(),
            "landings {:?} vs {:?} differ by {}",
            pc,
            pf,
            (pc - pf).norm()
        );
    }

    #[test]
    fn jacobian_rejects_tiny_velocity() {
        let (_, grid) = sphere_scene(16);
        let err = jacobian_at(&grid, Vec3::new(1.5, 0.0, 0.0), Vec3::repeat(1e-9));
        assert_eq!(err.unwrap_err().exit_code(), 4);
    }

    #[test]
    fn empty_trajectory_propagates_identity() {
        let traj = CurvedTrajectory {
            points: vec![Vec3::zeros()],
            velocities: vec![Vec3::x()],
            jacobians: vec![],
            terminal: Terminal::Escaped,
            path_length: 0.0,
            step_size: 0.1,
        };
        let d0 = Vec6::from_iterator([1.0, -2.0, 3.0, 0.5, 0.0, -1.5]);
        let d = propagate_perturbation(&traj, d0, Propagator::TaylorProduct).unwrap();
        assert_eq!(d, d0);
    }

    #[test]
    fn product_propagation_equals_stepwise_recurrence() {
        // ψ·d₀ with ψ = ∏(I + hJᵢ) applied left-to-right must equal the
        // step-by-step recurrence dᵢ₊₁ = dᵢ + h·Jᵢ·dᵢ — this pins the
        // multiplication order.
        let (mesh, grid) = sphere_scene(48);
        let cfg = TraceConfig::default();
        let ray = down_ray(0.4);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &cfg).unwrap();
        let v0 = seed_velocity(&grid, start, ray.dir, 0.5);
        let traj = curved_trace(&grid, &mesh, start, v0, &cfg, true).unwrap();
        assert!(!traj.jacobians.is_empty());

        let d0 = Vec6::from_iterator([0.1, 0.2, -0.3, 1.0, 0.0, -0.5]);
        let via_product = propagate_perturbation(&traj, d0, Propagator::TaylorProduct).unwrap();
        let mut d = d0;
        for j in &traj.jacobians {
            d += (j * d) * traj.step_size;
        }
        assert!((via_product - d).norm() < 1e-12 * d.norm().max(1.0));
    }

    #[test]
    fn exponential_and_taylor_transports_agree_for_small_steps() {
        let (mesh, grid) = sphere_scene(48);
        // Tiny h: exp(hJ) = I + hJ + O(h²), so the two propagators coincide.
        let cfg = TraceConfig { step_size: 1e-3, max_steps: 5, ..TraceConfig::default() };
        let ray = down_ray(0.4);
        let start = farthest_hull_hit(&grid, &ray, 0.4, &cfg).unwrap();
        let v0 = seed_velocity(&grid, start, ray.dir, 0.5);
        let traj = curved_trace(&grid, &mesh, start, v0, &cfg, true).unwrap();

        let d0 = Vec6::from_iterator([0.0, 0.0, 0.0, 0.3, -0.7, 0.1]);
        let taylor = propagate_perturbation(&traj, d0, Propagator::TaylorProduct).unwrap();
        let exp = propagate_perturbation(&traj, d0, Propagator::MatrixExponential).unwrap();
        assert!((taylor - exp).norm() < 1e-5 * taylor.norm().max(1.0));
    }

    fn shared_coarse_grid() -> &'static SdfGrid {
        static SCENE: std::sync::OnceLock<SdfGrid> = std::sync::OnceLock::new();
        SCENE.get_or_init(|| sphere_scene(16).1)
    }

    proptest! {
        /// Seeds are homogeneous in α: scaling α by a power of two scales the
        /// seed velocity exactly.
        #[test]
        fn seed_velocity_scales_exactly(alpha in 0.01f64..4.0, k in 1u32..4) {
            let grid = shared_coarse_grid();
            let start = Vec3::new(0.3, -0.2, 1.15);
            let dir = -Vec3::z();
            let base = seed_velocity(grid, start, dir, alpha);
            let scaled = seed_velocity(grid, start, dir, alpha * 2f64.powi(k as i32));
            prop_assert_eq!(base * 2f64.powi(k as i32), scaled);
        }
    }
}
