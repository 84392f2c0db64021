//! Procedural test meshes. All closed shapes are generated watertight with
//! outward (counter-clockwise) orientation; `signed_volume` in the tests
//! guards that. Default per-vertex scalars are the raw z coordinate, which
//! `normalize` later min-maxes to [0, 1].

use std::collections::HashMap;

use crate::math::Vec3;
use crate::mesh::Mesh;

fn with_height_scalars(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Mesh {
    let scalars = vertices.iter().map(|v| v.z).collect();
    Mesh { vertices, triangles, scalars }
}

/// Replace the scalar field by `f` evaluated at each vertex.
pub fn with_scalars(mut mesh: Mesh, f: impl Fn(Vec3) -> f64) -> Mesh {
    mesh.scalars = mesh.vertices.iter().map(|v| f(*v)).collect();
    mesh
}

/// Per-vertex mask selecting vertices within `angular_radius` of `axis`
/// as seen from the origin.
pub fn radial_mask(mesh: &Mesh, axis: Vec3, angular_radius: f64) -> Vec<bool> {
    let axis = axis.normalize();
    mesh.vertices
        .iter()
        .map(|v| {
            let n = v.norm();
            n > 1e-12 && (v / n).dot(&axis).clamp(-1.0, 1.0).acos() <= angular_radius
        })
        .collect()
}

/// Icosphere: subdivided icosahedron projected to radius `r`.
pub fn icosphere(r: f64, subdivisions: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([tri[0], mid[0], mid[2]]);
            next.push([tri[1], mid[1], mid[0]]);
            next.push([tri[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        triangles = next;
    }

    for v in &mut vertices {
        *v *= r;
    }
    with_height_scalars(vertices, triangles)
}

/// Axis-aligned box with the given half extents, 12 triangles.
pub fn box_mesh(half: Vec3) -> Mesh {
    let (hx, hy, hz) = (half.x, half.y, half.z);
    let vertices = vec![
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(-hx, -hy, hz),
        Vec3::new(-hx, hy, -hz),
        Vec3::new(-hx, hy, hz),
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, -hy, hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(hx, hy, hz),
    ];
    let triangles = vec![
        [0, 1, 3],
        [0, 3, 2], // -x
        [4, 6, 7],
        [4, 7, 5], // +x
        [0, 4, 5],
        [0, 5, 1], // -y
        [2, 3, 7],
        [2, 7, 6], // +y
        [0, 2, 6],
        [0, 6, 4], // -z
        [1, 5, 7],
        [1, 7, 3], // +z
    ];
    with_height_scalars(vertices, triangles)
}

/// Torus around the z axis: major radius `major`, tube radius `minor`.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for iu in 0..nu {
        let u = iu as f64 / nu as f64 * std::f64::consts::TAU;
        for iv in 0..nv {
            let v = iv as f64 / nv as f64 * std::f64::consts::TAU;
            let ring = major + minor * v.cos();
            vertices.push(Vec3::new(ring * u.cos(), ring * u.sin(), minor * v.sin()));
        }
    }
    let idx = |iu: usize, iv: usize| (iu % nu * nv + iv % nv) as u32;
    let mut triangles = Vec::with_capacity(nu * nv * 2);
    for iu in 0..nu {
        for iv in 0..nv {
            let (a, b, c, d) = (idx(iu, iv), idx(iu + 1, iv), idx(iu + 1, iv + 1), idx(iu, iv + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    with_height_scalars(vertices, triangles)
}

/// Open rectangular sheet at `z`, spanning [-hw, hw] x [-hh, hh]; normal +z.
/// Exercises the open-mesh sign handling of the distance grid.
pub fn wall(hw: f64, hh: f64, z: f64) -> Mesh {
    let vertices = vec![
        Vec3::new(-hw, -hh, z),
        Vec3::new(hw, -hh, z),
        Vec3::new(hw, hh, z),
        Vec3::new(-hw, hh, z),
    ];
    let triangles = vec![[0, 1, 2], [0, 2, 3]];
    with_height_scalars(vertices, triangles)
}

pub fn single_triangle(a: Vec3, b: Vec3, c: Vec3) -> Mesh {
    with_height_scalars(vec![a, b, c], vec![[0, 1, 2]])
}

/// Tube of radius `tube_r` swept along a (2,3) trefoil knot, Frenet-framed.
/// A classic occlusion-heavy closed shape; raw coordinates span roughly ±3.
pub fn trefoil_tube(tube_r: f64, nu: usize, nv: usize) -> Mesh {
    let center = |t: f64| {
        Vec3::new(
            t.sin() + 2.0 * (2.0 * t).sin(),
            t.cos() - 2.0 * (2.0 * t).cos(),
            -(3.0 * t).sin(),
        )
    };
    let tangent = |t: f64| {
        Vec3::new(
            t.cos() + 4.0 * (2.0 * t).cos(),
            -t.sin() + 4.0 * (2.0 * t).sin(),
            -3.0 * (3.0 * t).cos(),
        )
        .normalize()
    };
    // Frenet normal by central difference of the unit tangent; the trefoil's
    // curvature never vanishes, so the frame is globally defined and the
    // closed tube seams match.
    let normal = |t: f64| {
        let dt = 1e-5;
        (tangent(t + dt) - tangent(t - dt)).normalize()
    };

    let mut vertices = Vec::with_capacity(nu * nv);
    for iu in 0..nu {
        let t = iu as f64 / nu as f64 * std::f64::consts::TAU;
        let (c, tn, n) = (center(t), tangent(t), normal(t));
        let b = tn.cross(&n);
        for iv in 0..nv {
            let th = iv as f64 / nv as f64 * std::f64::consts::TAU;
            vertices.push(c + (n * th.cos() + b * th.sin()) * tube_r);
        }
    }
    let idx = |iu: usize, iv: usize| (iu % nu * nv + iv % nv) as u32;
    let mut triangles = Vec::with_capacity(nu * nv * 2);
    for iu in 0..nu {
        for iv in 0..nv {
            let (a, b, c, d) = (idx(iu, iv), idx(iu + 1, iv), idx(iu + 1, iv + 1), idx(iu, iv + 1));
            // dt x dθ points inward for this frame, so wind the other way.
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    with_height_scalars(vertices, triangles)
}

/// Pawn-like surface of revolution around z: bulbous base, concave neck,
/// small head. Closed with vertex fans at both poles.
pub fn pawn(nu: usize, nv: usize) -> Mesh {
    let profile = |u: f64| {
        let neck = (-((u - 0.62) / 0.13).powi(2)).exp();
        (std::f64::consts::PI * u).sin() * (0.75 - 0.45 * neck)
    };
    let zof = |u: f64| 2.0 * u - 1.0;

    let mut vertices = vec![Vec3::new(0.0, 0.0, zof(0.0))];
    for i in 1..nu {
        let u = i as f64 / nu as f64;
        let (rho, z) = (profile(u), zof(u));
        for j in 0..nv {
            let th = j as f64 / nv as f64 * std::f64::consts::TAU;
            vertices.push(Vec3::new(rho * th.cos(), rho * th.sin(), z));
        }
    }
    let top = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, zof(1.0)));

    let ring = |i: usize, j: usize| (1 + (i - 1) * nv + j % nv) as u32;
    let mut triangles = Vec::new();
    for j in 0..nv {
        // Bottom cap: outward normal points -z, wind clockwise seen from +z.
        triangles.push([0, ring(1, j + 1), ring(1, j)]);
        triangles.push([top, ring(nu - 1, j), ring(nu - 1, j + 1)]);
    }
    for i in 1..nu - 1 {
        for j in 0..nv {
            let (a, b, c, d) = (ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
            // du x dθ points inward for the revolution frame; wind reversed.
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    with_height_scalars(vertices, triangles)
}
