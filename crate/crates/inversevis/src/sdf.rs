//! Signed distance grid over the fixed domain [-2.5, 2.5]³.
//!
//! Each voxel stores the signed distance from its center to the mesh plus a
//! payload identifying the closest surface point (triangle id and barycentric
//! coordinates), so a ray hit can be snapped back onto the mesh and its
//! scalar value read off. Distances are positive outside the surface and
//! negative inside; the sign comes from the angle-weighted pseudo-normal of
//! the closest feature, which also gives open sheets a two-sided field.
//!
//! Sampling between voxel centers is trilinear. First and second derivatives
//! are central differences of the sampled field with spacing equal to one
//! voxel edge; near the domain boundary they degrade to one-sided stencils
//! and are flagged via [`Sampled::clamped`].

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::mesh::{barycentric_scalar, edge_key, Mesh};

pub const GRID_MIN: f64 = -2.5;
pub const GRID_MAX: f64 = 2.5;
pub const DEFAULT_RESOLUTION: usize = 200;

const CACHE_MAGIC: &[u8; 8] = b"IVSDF001";

/// Bytes per voxel record in the cache file: f32 distance, u32 triangle,
/// 3 x f32 barycentric coordinates, all little-endian.
const CACHE_RECORD: usize = 4 + 4 + 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuildStrategy {
    /// Brute force for small meshes, BVH otherwise.
    Auto,
    BruteForce,
    Bvh,
}

/// Triangle count at or below which `Auto` stays brute force.
const BRUTE_FORCE_LIMIT: usize = 64;

/// A value sampled from the grid. `clamped` is set when any lattice access
/// fell outside the domain (the sample was evaluated at the clamped position,
/// derivatives fell back to one-sided stencils).
#[derive(Debug, Clone, Copy)]
pub struct Sampled<T> {
    pub value: T,
    pub clamped: bool,
}

/// A point snapped back onto the mesh via the voxel payload.
#[derive(Debug, Clone)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub triangle: u32,
    pub bary: [f64; 3],
    pub scalar: f64,
}

#[derive(Debug, Clone)]
pub struct SdfGrid {
    resolution: usize,
    mesh_hash: u64,
    distance: Vec<f32>,
    tri: Vec<u32>,
    bary: Vec<[f32; 3]>,
}

impl SdfGrid {
    pub fn build(mesh: &Mesh, resolution: usize) -> Result<SdfGrid> {
        Self::build_with(mesh, resolution, BuildStrategy::Auto)
    }

    pub fn build_with(mesh: &Mesh, resolution: usize, strategy: BuildStrategy) -> Result<SdfGrid> {
        if resolution < 2 {
            return Err(Error::config(format!("grid resolution {resolution} below minimum 2")));
        }
        let (lo, hi) = mesh.bounding_box();
        if lo.min() < GRID_MIN || hi.max() > GRID_MAX {
            return Err(Error::config(format!(
                "mesh bounding box [{lo:?}, {hi:?}] exceeds the grid domain [{GRID_MIN}, {GRID_MAX}]"
            )));
        }

        let brute = match strategy {
            BuildStrategy::BruteForce => true,
            BuildStrategy::Bvh => false,
            BuildStrategy::Auto => mesh.triangles.len() <= BRUTE_FORCE_LIMIT,
        };
        let features = FeatureNormals::new(mesh);
        let bvh = if brute { None } else { Some(Bvh::new(mesh)) };

        let res = resolution;
        let edge = (GRID_MAX - GRID_MIN) / res as f64;
        let slabs: Vec<(Vec<f32>, Vec<u32>, Vec<[f32; 3]>)> = (0..res)
            .into_par_iter()
            .map(|ix| {
                let mut distance = Vec::with_capacity(res * res);
                let mut tri = Vec::with_capacity(res * res);
                let mut bary = Vec::with_capacity(res * res);
                let x = GRID_MIN + (ix as f64 + 0.5) * edge;
                for iy in 0..res {
                    let y = GRID_MIN + (iy as f64 + 0.5) * edge;
                    for iz in 0..res {
                        let z = GRID_MIN + (iz as f64 + 0.5) * edge;
                        let q = Vec3::new(x, y, z);
                        let hit = match &bvh {
                            Some(b) => b.closest(mesh, q),
                            None => brute_closest(mesh, q),
                        };
                        let n = features.pseudo_normal(mesh, hit.triangle, hit.bary);
                        let sign = if (q - hit.point).dot(&n) < 0.0 { -1.0 } else { 1.0 };
                        distance.push((sign * hit.dist2.sqrt()) as f32);
                        tri.push(hit.triangle);
                        bary.push(hit.bary.map(|w| w as f32));
                    }
                }
                (distance, tri, bary)
            })
            .collect();

        let mut grid = SdfGrid {
            resolution: res,
            mesh_hash: mesh.content_hash(),
            distance: Vec::with_capacity(res * res * res),
            tri: Vec::with_capacity(res * res * res),
            bary: Vec::with_capacity(res * res * res),
        };
        for (d, t, b) in slabs {
            grid.distance.extend(d);
            grid.tri.extend(t);
            grid.bary.extend(b);
        }
        Ok(grid)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn mesh_hash(&self) -> u64 {
        self.mesh_hash
    }

    /// Side length of one voxel.
    pub fn voxel_edge(&self) -> f64 {
        (GRID_MAX - GRID_MIN) / self.resolution as f64
    }

    /// Space diagonal of one voxel, the natural length unit for snap and
    /// integration-error tolerances.
    pub fn voxel_diagonal(&self) -> f64 {
        self.voxel_edge() * 3f64.sqrt()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.voxel_edge();
        Vec3::new(
            GRID_MIN + (i as f64 + 0.5) * e,
            GRID_MIN + (j as f64 + 0.5) * e,
            GRID_MIN + (k as f64 + 0.5) * e,
        )
    }

    /// Voxel containing `p`, clamped into the grid for out-of-domain points.
    pub fn voxel_of(&self, p: Vec3) -> (usize, usize, usize) {
        let e = self.voxel_edge();
        let max = self.resolution - 1;
        let f = |x: f64| (((x - GRID_MIN) / e).floor().max(0.0) as usize).min(max);
        (f(p.x), f(p.y), f(p.z))
    }

    pub fn distance_at_voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.distance[self.index(i, j, k)] as f64
    }

    pub fn payload_at_voxel(&self, i: usize, j: usize, k: usize) -> (f32, u32, [f32; 3]) {
        let idx = self.index(i, j, k);
        (self.distance[idx], self.tri[idx], self.bary[idx])
    }

    /// Lattice cell and interpolation fractions for `p`, in voxel-center
    /// coordinates. The boolean reports clamping to the center lattice hull.
    fn lattice(&self, p: Vec3) -> ([usize; 3], [f64; 3], bool) {
        let e = self.voxel_edge();
        let top = (self.resolution - 1) as f64;
        let mut cell = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut clamped = false;
        for a in 0..3 {
            let u = (p[a] - GRID_MIN) / e - 0.5;
            let uc = u.clamp(0.0, top);
            if uc != u {
                clamped = true;
            }
            let base = uc.floor().min(top - 1.0);
            cell[a] = base as usize;
            frac[a] = uc - base;
        }
        (cell, frac, clamped)
    }

    /// Trilinear interpolation of the signed distance at `p`.
    pub fn sample_distance(&self, p: Vec3) -> Sampled<f64> {
        let (c, f, clamped) = self.lattice(p);
        let mut value = 0.0;
        for (di, wi) in [(0, 1.0 - f[0]), (1, f[0])] {
            for (dj, wj) in [(0, 1.0 - f[1]), (1, f[1])] {
                for (dk, wk) in [(0, 1.0 - f[2]), (1, f[2])] {
                    let d = self.distance[self.index(c[0] + di, c[1] + dj, c[2] + dk)] as f64;
                    value += wi * wj * wk * d;
                }
            }
        }
        Sampled { value, clamped }
    }

    /// Whether `p` lies strictly inside the voxel-center hull, i.e. all the
    /// lattice points a spacing-`e` stencil at `p` touches exist.
    fn in_center_hull(&self, p: Vec3) -> bool {
        let e = self.voxel_edge();
        (0..3).all(|a| {
            let u = (p[a] - GRID_MIN) / e - 0.5;
            u >= 0.0 && u <= (self.resolution - 1) as f64
        })
    }

    /// Central-difference gradient with spacing of one voxel edge. Falls back
    /// to a one-sided difference (and sets `clamped`) where the stencil would
    /// leave the grid.
    pub fn gradient(&self, p: Vec3) -> Sampled<Vec3> {
        let e = self.voxel_edge();
        let mut g = Vec3::zeros();
        let mut clamped = false;
        for a in 0..3 {
            let mut step = Vec3::zeros();
            step[a] = e;
            let (hi_in, lo_in) = (self.in_center_hull(p + step), self.in_center_hull(p - step));
            g[a] = match (hi_in, lo_in) {
                (true, true) => {
                    (self.sample_distance(p + step).value - self.sample_distance(p - step).value)
                        / (2.0 * e)
                }
                (true, false) => {
                    clamped = true;
                    (self.sample_distance(p + step).value - self.sample_distance(p).value) / e
                }
                (false, true) => {
                    clamped = true;
                    (self.sample_distance(p).value - self.sample_distance(p - step).value) / e
                }
                (false, false) => {
                    clamped = true;
                    0.0
                }
            };
        }
        Sampled { value: g, clamped }
    }

    /// Second-difference Hessian with spacing of one voxel edge. Mixed terms
    /// are computed once and mirrored, so the result is exactly symmetric.
    pub fn hessian(&self, p: Vec3) -> Sampled<Mat3> {
        let e = self.voxel_edge();
        let mut clamped = false;
        let mut sample = |q: Vec3| {
            let s = self.sample_distance(q);
            clamped |= s.clamped || !self.in_center_hull(q);
            s.value
        };
        let axis = |a: usize| {
            let mut v = Vec3::zeros();
            v[a] = e;
            v
        };

        let center = sample(p);
        let mut h = Mat3::zeros();
        for a in 0..3 {
            let da = axis(a);
            h[(a, a)] = (sample(p + da) - 2.0 * center + sample(p - da)) / (e * e);
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let (da, db) = (axis(a), axis(b));
            let mixed = (sample(p + da + db) - sample(p + da - db) - sample(p - da + db)
                + sample(p - da - db))
                / (4.0 * e * e);
            h[(a, b)] = mixed;
            h[(b, a)] = mixed;
        }
        Sampled { value: h, clamped }
    }

    /// Snap `p` onto the mesh through the payload of its containing voxel:
    /// the recorded closest surface point and its interpolated scalar.
    pub fn surface_point(&self, mesh: &Mesh, p: Vec3) -> Result<SurfacePoint> {
        let (i, j, k) = self.voxel_of(p);
        let idx = self.index(i, j, k);
        let triangle = self.tri[idx];
        let bary = self.bary[idx].map(|w| w as f64);
        let [a, b, c] = mesh.triangle_vertices(triangle);
        let position = a * bary[0] + b * bary[1] + c * bary[2];
        let scalar = barycentric_scalar(mesh, triangle, bary)?;
        Ok(SurfacePoint { position, triangle, bary, scalar })
    }

    /// Serialize to the binary cache format: magic, resolution, mesh hash,
    /// then one fixed-width record per voxel, everything little-endian.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let mut w = std::io::BufWriter::with_capacity(1 << 20, file);
        let mut io = |bytes: &[u8]| {
            w.write_all(bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
        };
        io(CACHE_MAGIC)?;
        io(&(self.resolution as u32).to_le_bytes())?;
        io(&self.mesh_hash.to_le_bytes())?;
        for i in 0..self.distance.len() {
            io(&self.distance[i].to_le_bytes())?;
            io(&self.tri[i].to_le_bytes())?;
            for coord in self.bary[i] {
                io(&coord.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Load a cached grid. Returns `Ok(None)` when the file is absent, stale
    /// (wrong mesh hash or resolution), or structurally invalid — callers
    /// rebuild in all those cases. Only a genuine I/O failure is an error.
    pub fn read_cache(path: &Path, mesh_hash: u64, resolution: usize) -> Result<Option<SdfGrid>> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::Io { path: path.to_path_buf(), source: e }),
        };
        let header = 8 + 4 + 8;
        if bytes.len() < header || &bytes[..8] != CACHE_MAGIC {
            return Ok(None);
        }
        let res = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hash = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let voxels = res * res * res;
        if res != resolution || hash != mesh_hash || bytes.len() != header + voxels * CACHE_RECORD {
            return Ok(None);
        }

        let mut grid = SdfGrid {
            resolution: res,
            mesh_hash: hash,
            distance: Vec::with_capacity(voxels),
            tri: Vec::with_capacity(voxels),
            bary: Vec::with_capacity(voxels),
        };
        let f32le = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
        for rec in bytes[header..].chunks_exact(CACHE_RECORD) {
            grid.distance.push(f32le(&rec[0..4]));
            grid.tri.push(u32::from_le_bytes(rec[4..8].try_into().unwrap()));
            grid.bary.push([f32le(&rec[8..12]), f32le(&rec[12..16]), f32le(&rec[16..20])]);
        }
        Ok(Some(grid))
    }
}

struct ClosestHit {
    triangle: u32,
    point: Vec3,
    bary: [f64; 3],
    dist2: f64,
}

impl ClosestHit {
    /// Canonical winner order: distance first, then lowest triangle id.
    /// Voxel centers whose closest feature is a shared edge or vertex tie
    /// exactly across triangles; breaking ties by id keeps the payload
    /// independent of the query strategy.
    fn beats(dist2: f64, triangle: u32, best: &ClosestHit) -> bool {
        dist2 < best.dist2 || (dist2 == best.dist2 && triangle < best.triangle)
    }
}

fn brute_closest(mesh: &Mesh, q: Vec3) -> ClosestHit {
    let mut best = ClosestHit {
        triangle: u32::MAX,
        point: Vec3::zeros(),
        bary: [0.0; 3],
        dist2: f64::INFINITY,
    };
    for t in 0..mesh.triangles.len() as u32 {
        let [a, b, c] = mesh.triangle_vertices(t);
        let (point, bary) = closest_point_triangle(q, a, b, c);
        let dist2 = (q - point).norm_squared();
        if ClosestHit::beats(dist2, t, &best) {
            best = ClosestHit { triangle: t, point, bary, dist2 };
        }
    }
    best
}

/// Closest point on a triangle with its barycentric coordinates. Edge and
/// vertex regions return exact zeros in the corresponding coordinates, which
/// downstream feature classification relies on.
fn closest_point_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = va + vb + vc;
    if denom <= 0.0 || !denom.is_finite() {
        // Degenerate triangle: fall back to the nearest vertex.
        let cands = [(a, [1.0, 0.0, 0.0]), (b, [0.0, 1.0, 0.0]), (c, [0.0, 0.0, 1.0])];
        return cands
            .into_iter()
            .min_by(|(x, _), (y, _)| {
                (p - x).norm_squared().partial_cmp(&(p - y).norm_squared()).unwrap()
            })
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Face normals plus edge and vertex adjacency, for angle-weighted
/// pseudo-normal sign queries.
struct FeatureNormals {
    face_normal: Vec<Vec3>,
    edge_faces: HashMap<(u32, u32), Vec<u32>>,
    vertex_faces: Vec<Vec<u32>>,
}

/// Barycentric coordinates at or below this are treated as lying on the
/// feature boundary (edge/vertex) for sign classification.
const FEATURE_EPS: f64 = 1e-9;

impl FeatureNormals {
    fn new(mesh: &Mesh) -> Self {
        let mut face_normal = Vec::with_capacity(mesh.triangles.len());
        let mut edge_faces: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        let mut vertex_faces = vec![Vec::new(); mesh.vertices.len()];
        for (f, tri) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = mesh.triangle_vertices(f as u32);
            let n = (b - a).cross(&(c - a));
            let norm = n.norm();
            face_normal.push(if norm > 1e-18 { n / norm } else { Vec3::zeros() });
            for k in 0..3 {
                edge_faces.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default().push(f as u32);
                vertex_faces[tri[k] as usize].push(f as u32);
            }
        }
        FeatureNormals { face_normal, edge_faces, vertex_faces }
    }

    fn pseudo_normal(&self, mesh: &Mesh, triangle: u32, bary: [f64; 3]) -> Vec3 {
        let tri = mesh.triangles[triangle as usize];
        let zero: Vec<usize> = (0..3).filter(|&i| bary[i] <= FEATURE_EPS).collect();
        let n = match zero.len() {
            // Interior of the face.
            0 => self.face_normal[triangle as usize],
            // On an edge: sum of the adjacent faces' unit normals.
            1 => {
                let (i, j) = match zero[0] {
                    0 => (tri[1], tri[2]),
                    1 => (tri[0], tri[2]),
                    _ => (tri[0], tri[1]),
                };
                self.edge_faces
                    .get(&edge_key(i, j))
                    .map(|faces| faces.iter().map(|&f| self.face_normal[f as usize]).sum())
                    .unwrap_or_else(Vec3::zeros)
            }
            // On a vertex: incidence-angle-weighted sum over incident faces.
            _ => {
                let v = (0..3).find(|&i| bary[i] > FEATURE_EPS).unwrap_or(0);
                let vid = tri[v];
                self.vertex_faces[vid as usize]
                    .iter()
                    .map(|&f| self.face_normal[f as usize] * corner_angle(mesh, f, vid))
                    .sum()
            }
        };
        if n.norm_squared() > 1e-24 {
            n
        } else {
            self.face_normal[triangle as usize]
        }
    }
}

fn corner_angle(mesh: &Mesh, face: u32, vertex: u32) -> f64 {
    let tri = mesh.triangles[face as usize];
    let k = (0..3).find(|&i| tri[i] == vertex).unwrap();
    let [a, b, c] = [
        mesh.vertices[tri[k] as usize],
        mesh.vertices[tri[(k + 1) % 3] as usize],
        mesh.vertices[tri[(k + 2) % 3] as usize],
    ];
    let (u, v) = (b - a, c - a);
    let denom = u.norm() * v.norm();
    if denom < 1e-18 {
        return 0.0;
    }
    (u.dot(&v) / denom).clamp(-1.0, 1.0).acos()
}

/// Axis-aligned BVH over triangles, median-split on the longest centroid
/// axis, branch-and-bound closest-point queries. Produces exactly the same
/// distances as the brute-force scan (ties aside, which need an exact f64
/// distance tie to differ).
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `start..start+count` into `order`. Internal: count == 0 and
    /// `left`/`right` are child node indices.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

const BVH_LEAF_SIZE: usize = 8;

impl Bvh {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.triangles.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vec3> = (0..n as u32)
            .map(|t| {
                let [a, b, c] = mesh.triangle_vertices(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n / BVH_LEAF_SIZE + 2);
        Self::split(mesh, &centroids, &mut order, &mut nodes, 0, n);
        Bvh { nodes, order }
    }

    /// Build the subtree over `order[start..end]`; returns its node index.
    fn split(
        mesh: &Mesh,
        centroids: &[Vec3],
        order: &mut [u32],
        nodes: &mut Vec<BvhNode>,
        start: usize,
        end: usize,
    ) -> u32 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &t in &order[start..end] {
            for v in mesh.triangle_vertices(t) {
                lo = lo.inf(&v);
                hi = hi.sup(&v);
            }
            clo = clo.inf(&centroids[t as usize]);
            chi = chi.sup(&centroids[t as usize]);
        }

        let id = nodes.len() as u32;
        nodes.push(BvhNode { lo, hi, left: 0, right: 0, start: start as u32, count: 0 });
        let len = end - start;
        if len <= BVH_LEAF_SIZE {
            nodes[id as usize].count = len as u32;
            return id;
        }

        let extent = chi - clo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = start + len / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].partial_cmp(&centroids[b as usize][axis]).unwrap()
        });

        let left = Self::split(mesh, centroids, order, nodes, start, mid);
        let right = Self::split(mesh, centroids, order, nodes, mid, end);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    fn aabb_dist2(node: &BvhNode, p: Vec3) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let v = p[a].clamp(node.lo[a], node.hi[a]) - p[a];
            d2 += v * v;
        }
        d2
    }

    fn closest(&self, mesh: &Mesh, q: Vec3) -> ClosestHit {
        let mut best = ClosestHit {
            triangle: u32::MAX,
            point: Vec3::zeros(),
            bary: [0.0; 3],
            dist2: f64::INFINITY,
        };
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            // Strictly-greater pruning: a node whose bound merely equals the
            // best distance may still hold an equal-distance lower-id
            // triangle, which the canonical tie-break must see.
            if Self::aabb_dist2(node, q) > best.dist2 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = mesh.triangle_vertices(t);
                    let (point, bary) = closest_point_triangle(q, a, b, c);
                    let dist2 = (q - point).norm_squared();
                    if ClosestHit::beats(dist2, t, &best) {
                        best = ClosestHit { triangle: t, point, bary, dist2 };
                    }
                }
            } else {
                // Visit the nearer child first so the bound tightens early.
                let (l, r) = (node.left, node.right);
                let dl = Self::aabb_dist2(&self.nodes[l as usize], q);
                let dr = Self::aabb_dist2(&self.nodes[r as usize], q);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}
