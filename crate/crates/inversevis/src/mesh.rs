//! Mesh I/O and the per-vertex importance field.
//!
//! Meshes are indexed triangle soups read from an OFF-style text format:
//! an optional `OFF` header line, a counts line `nv nf [ne]`, then `nv`
//! vertex lines `x y z [scalar]` and `nf` face lines `3 i j k`. Either every
//! vertex line carries the optional scalar column or none does; scalars can
//! also come from a sidecar file with one value per line in vertex order.
//! `#` starts a comment. Faces must be triangles.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex scalar field; empty when the mesh carries none.
    pub scalars: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum ScalarSource {
    /// Use the scalar column embedded in the mesh file, if any.
    Embedded,
    /// Read one scalar per line, in vertex order, from a sidecar file.
    Sidecar(PathBuf),
}

impl Mesh {
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn triangle_vertices(&self, tri: u32) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri as usize];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// FNV-1a over the canonical little-endian byte encoding of the mesh.
    /// Used to invalidate distance-grid caches when the mesh changes.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in 0..3 {
                eat(&v[c].to_le_bytes());
            }
        }
        eat(&(self.triangles.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for &i in t {
                eat(&i.to_le_bytes());
            }
        }
        eat(&(self.scalars.len() as u64).to_le_bytes());
        for s in &self.scalars {
            eat(&s.to_le_bytes());
        }
        h
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Load a mesh and resolve its scalar source. The returned mesh is raw
/// (not normalized); `scalars` is empty when neither the file nor a sidecar
/// provides values.
pub fn load_mesh(path: &Path, source: &ScalarSource) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut mesh = parse_mesh_text(&text, path)?;
    if let Some(defect) = watertight_defect(&mesh) {
        return Err(parse_err(path, 0, defect));
    }

    if let ScalarSource::Sidecar(sidecar) = source {
        let text = std::fs::read_to_string(sidecar).map_err(|e| io_err(sidecar, e))?;
        let mut scalars = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let s: f64 = line
                .parse()
                .map_err(|_| parse_err(sidecar, ln + 1, format!("not a scalar: {line:?}")))?;
            if !s.is_finite() {
                return Err(parse_err(sidecar, ln + 1, "non-finite scalar"));
            }
            scalars.push(s);
        }
        if scalars.len() != mesh.vertices.len() {
            return Err(parse_err(
                sidecar,
                0,
                format!("{} scalars for {} vertices", scalars.len(), mesh.vertices.len()),
            ));
        }
        mesh.scalars = scalars;
    }
    Ok(mesh)
}

pub fn parse_mesh_text(text: &str, path: &Path) -> Result<Mesh> {
    // (line number, content) with comments and blanks stripped.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (mut ln, mut header) = lines.next().ok_or_else(|| parse_err(path, 0, "empty file"))?;
    if header.eq_ignore_ascii_case("off") {
        (ln, header) = lines.next().ok_or_else(|| parse_err(path, ln, "missing counts line"))?;
    }
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, ln, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(path, ln, "counts line needs `nv nf`"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    let mut scalars = Vec::new();
    let mut scalar_width: Option<bool> = None;
    for _ in 0..nv {
        let (ln, line) =
            lines.next().ok_or_else(|| parse_err(path, 0, "unexpected end of vertex list"))?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, ln, format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        let has_scalar = match nums.len() {
            3 => false,
            4 => true,
            n => return Err(parse_err(path, ln, format!("vertex line has {n} fields, want 3 or 4"))),
        };
        if *scalar_width.get_or_insert(has_scalar) != has_scalar {
            return Err(parse_err(path, ln, "mixed vertex lines with and without scalars"));
        }
        if nums.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, ln, "non-finite vertex data"));
        }
        vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
        if has_scalar {
            scalars.push(nums[3]);
        }
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, line) =
            lines.next().ok_or_else(|| parse_err(path, 0, "unexpected end of face list"))?;
        let idx: Vec<u64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, ln, format!("bad index {t:?}"))))
            .collect::<Result<_>>()?;
        if idx.is_empty() || idx[0] != 3 || idx.len() != 4 {
            return Err(parse_err(path, ln, "only triangle faces are supported"));
        }
        let tri: Vec<u32> = idx[1..]
            .iter()
            .map(|&i| {
                if (i as usize) < nv {
                    Ok(i as u32)
                } else {
                    Err(parse_err(path, ln, format!("vertex index {i} out of range")))
                }
            })
            .collect::<Result<_>>()?;
        triangles.push([tri[0], tri[1], tri[2]]);
    }

    if triangles.is_empty() {
        return Err(parse_err(path, 0, "mesh has no triangles"));
    }
    Ok(Mesh { vertices, triangles, scalars })
}

/// Serialize a mesh back to the text format (scalar column included when
/// present). Used by the CLI demo assets and by tests.
pub fn mesh_to_text(mesh: &Mesh) -> String {
    let mut out = String::from("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.vertices.len(), mesh.triangles.len()));
    for (i, v) in mesh.vertices.iter().enumerate() {
        if mesh.scalars.is_empty() {
            out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
        } else {
            out.push_str(&format!("{} {} {} {}\n", v.x, v.y, v.z, mesh.scalars[i]));
        }
    }
    for t in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out
}

/// Uniformly rescale and translate so the tight bounding box is centered at
/// the origin and touches ±1 on its longest axis; min-max scalars to [0, 1]
/// (a constant field collapses to all zeros).
pub fn normalize(mesh: &Mesh) -> Result<Mesh> {
    let (lo, hi) = mesh.bounding_box();
    let extent = hi - lo;
    let longest = extent.max();
    if !longest.is_finite() || longest <= 0.0 {
        return Err(Error::config("degenerate mesh: zero-extent bounding box"));
    }
    let center = (lo + hi) * 0.5;
    let scale = 2.0 / longest;
    let vertices = mesh.vertices.iter().map(|v| (v - center) * scale).collect();

    let scalars = if mesh.scalars.is_empty() {
        Vec::new()
    } else {
        let min = mesh.scalars.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = mesh.scalars.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max - min <= 0.0 {
            vec![0.0; mesh.scalars.len()]
        } else {
            mesh.scalars.iter().map(|s| (s - min) / (max - min)).collect()
        }
    };

    Ok(Mesh { vertices, triangles: mesh.triangles.clone(), scalars })
}

/// Interpolate the per-vertex scalar at barycentric coordinates on a triangle.
/// Weights must be non-negative (within 1e-6) and sum to 1 (within 1e-6).
pub fn barycentric_scalar(mesh: &Mesh, tri: u32, bary: [f64; 3]) -> Result<f64> {
    if tri as usize >= mesh.triangles.len() {
        return Err(Error::config(format!("triangle id {tri} out of range")));
    }
    let sum: f64 = bary.iter().sum();
    if bary.iter().any(|&w| w < -1e-6) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::numeric(format!("invalid barycentric weights {bary:?}")));
    }
    if mesh.scalars.is_empty() {
        return Ok(0.0);
    }
    let t = mesh.triangles[tri as usize];
    Ok((0..3).map(|i| bary[i] * mesh.scalars[t[i] as usize]).sum())
}

/// What surface quantity the energy integrates.
#[derive(Debug, Clone)]
pub enum ImportanceField {
    /// The mesh's normalized per-vertex scalar field.
    Scalar,
    /// A per-vertex binary mask, interpolated like a scalar.
    Mask(Vec<bool>),
    /// s ≡ 1, de-duplicated per voxel by the visibility grid.
    Visibility,
}

impl ImportanceField {
    /// Validate that the mesh can supply this field.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        match self {
            ImportanceField::Scalar if mesh.scalars.is_empty() => {
                Err(Error::config("scalar importance requested but the mesh has no scalars"))
            }
            ImportanceField::Mask(m) if m.len() != mesh.vertices.len() => {
                Err(Error::config("mask length does not match vertex count"))
            }
            _ => Ok(()),
        }
    }

    /// Importance value at a surface point. For `Visibility` this is the raw
    /// (un-deduplicated) value 1; de-duplication happens in the energy sum.
    pub fn value(&self, mesh: &Mesh, tri: u32, bary: [f64; 3]) -> Result<f64> {
        match self {
            ImportanceField::Scalar => barycentric_scalar(mesh, tri, bary),
            ImportanceField::Mask(mask) => {
                let t = mesh.triangles[tri as usize];
                Ok((0..3).map(|i| bary[i] * (mask[t[i] as usize] as u8 as f64)).sum())
            }
            ImportanceField::Visibility => Ok(1.0),
        }
    }

    /// Tangent-plane gradient of the linear interpolant on one triangle.
    /// Constant per triangle; zero for degenerate triangles and for the
    /// visibility field.
    pub fn surface_gradient(&self, mesh: &Mesh, tri: u32) -> Vec3 {
        let values: [f64; 3] = match self {
            ImportanceField::Visibility => return Vec3::zeros(),
            ImportanceField::Scalar => {
                if mesh.scalars.is_empty() {
                    return Vec3::zeros();
                }
                let t = mesh.triangles[tri as usize];
                [0, 1, 2].map(|i| mesh.scalars[t[i] as usize])
            }
            ImportanceField::Mask(mask) => {
                let t = mesh.triangles[tri as usize];
                [0, 1, 2].map(|i| mask[t[i] as usize] as u8 as f64)
            }
        };
        let [a, b, c] = mesh.triangle_vertices(tri);
        let e1 = b - a;
        let e2 = c - a;
        let (g11, g12, g22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
        let det = g11 * g22 - g12 * g12;
        if det.abs() < 1e-18 {
            return Vec3::zeros();
        }
        let d1 = values[1] - values[0];
        let d2 = values[2] - values[0];
        let u = (g22 * d1 - g12 * d2) / det;
        let v = (g11 * d2 - g12 * d1) / det;
        e1 * u + e2 * v
    }
}

/// Edge key independent of winding direction.
pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Counts of incident triangles per undirected edge. Closed watertight
/// meshes have exactly two everywhere.
pub fn edge_incidence(mesh: &Mesh) -> HashMap<(u32, u32), u32> {
    let mut map = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            *map.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    map
}

/// Check the closed, consistently-oriented precondition the signed distance
/// relies on: every directed edge must appear exactly once and be matched by
/// its reverse. Returns a description of the first defect, in triangle
/// order, or `None` for a sound mesh. A violation means inside/outside signs
/// would come out as garbage, so file loading treats it as a hard error.
pub fn watertight_defect(mesh: &Mesh) -> Option<String> {
    let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    for (i, t) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if directed[&(a, b)] > 1 {
                return Some(format!(
                    "edge {a}->{b} of triangle {i} is traversed twice in the same \
                     direction: inconsistent winding or a non-manifold fan"
                ));
            }
            if !directed.contains_key(&(b, a)) {
                return Some(format!(
                    "edge {a}->{b} of triangle {i} has no opposing partner: open \
                     boundary or a flipped neighbor"
                ));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("<mem>")
    }

    const TETRA: &str = "OFF\n4 4 0\n0 0 0 0.0\n1 0 0 1.0\n0 1 0 2.0\n0 0 1 4.0\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn parses_embedded_scalars() {
        let m = parse_mesh_text(TETRA, &p()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 4);
        assert_eq!(m.scalars, vec![0.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn rejects_non_triangle_faces() {
        let text = "4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n4 0 1 2 3\n";
        let err = parse_mesh_text(text, &p()).unwrap_err();
        assert!(err.to_string().contains("triangle"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_index() {
        let text = "3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n";
        assert!(parse_mesh_text(text, &p()).is_err());
    }

    #[test]
    fn rejects_mixed_scalar_columns() {
        let text = "3 1 0\n0 0 0 1.0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert!(parse_mesh_text(text, &p()).is_err());
    }

    #[test]
    fn rejects_nan_scalar() {
        let text = "3 1 0\n0 0 0 nan\n1 0 0 1\n0 1 0 1\n3 0 1 2\n";
        assert!(parse_mesh_text(text, &p()).is_err());
    }

    #[test]
    fn text_round_trip_preserves_mesh() {
        let m = parse_mesh_text(TETRA, &p()).unwrap();
        let m2 = parse_mesh_text(&mesh_to_text(&m), &p()).unwrap();
        assert_eq!(m.triangles, m2.triangles);
        assert_eq!(m.scalars, m2.scalars);
        for (a, b) in m.vertices.iter().zip(&m2.vertices) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn sidecar_scalar_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = dir.path().join("m.off");
        let side_path = dir.path().join("m.scalars");
        std::fs::write(&mesh_path, TETRA).unwrap();
        std::fs::write(&side_path, "0.5\n0.25\n").unwrap();
        let err = load_mesh(&mesh_path, &ScalarSource::Sidecar(side_path)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("2 scalars for 4 vertices"), "{err}");
    }

    #[test]
    fn loading_rejects_open_or_misoriented_meshes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.off");

        // A lone triangle has three boundary edges.
        std::fs::write(&path, "3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let err = load_mesh(&path, &ScalarSource::Embedded).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("no opposing partner"), "{err}");

        // A tetra with one face flipped is closed but inconsistently wound.
        let flipped = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n\
                       3 0 1 2\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
        std::fs::write(&path, flipped).unwrap();
        let err = load_mesh(&path, &ScalarSource::Embedded).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("same"), "{err}");

        // The sound version of the same tetra loads.
        std::fs::write(&path, TETRA).unwrap();
        assert!(load_mesh(&path, &ScalarSource::Embedded).is_ok());
        assert_eq!(watertight_defect(&parse_mesh_text(TETRA, &p()).unwrap()), None);
    }

    #[test]
    fn normalize_touches_unit_box_on_longest_axis() {
        let m = parse_mesh_text(TETRA, &p()).unwrap();
        let n = normalize(&m).unwrap();
        let (lo, hi) = n.bounding_box();
        let extent = hi - lo;
        assert!((extent.max() - 2.0).abs() < 1e-12);
        assert!(lo.min() >= -1.0 - 1e-12 && hi.max() <= 1.0 + 1e-12);
        // scalars min-maxed
        assert_eq!(n.scalars[0], 0.0);
        assert_eq!(n.scalars[3], 1.0);
    }

    #[test]
    fn normalize_constant_scalars_collapse_to_zero() {
        let mut m = parse_mesh_text(TETRA, &p()).unwrap();
        m.scalars = vec![3.0; 4];
        let n = normalize(&m).unwrap();
        assert!(n.scalars.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn normalize_rejects_degenerate_extent() {
        let m = Mesh {
            vertices: vec![Vec3::zeros(), Vec3::zeros(), Vec3::zeros()],
            triangles: vec![[0, 1, 2]],
            scalars: vec![],
        };
        assert_eq!(normalize(&m).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn barycentric_rejects_bad_weights() {
        let m = parse_mesh_text(TETRA, &p()).unwrap();
        assert!(barycentric_scalar(&m, 0, [0.7, 0.7, -0.4]).is_err());
        assert!(barycentric_scalar(&m, 0, [0.5, 0.5, 0.5]).is_err());
        assert!(barycentric_scalar(&m, 99, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn surface_gradient_matches_linear_field() {
        // Vertices on the xy plane with s = 2x + 3y: the tangent gradient of
        // the interpolant must be (2, 3, 0).
        let m = Mesh {
            vertices: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            triangles: vec![[0, 1, 2]],
            scalars: vec![0.0, 2.0, 3.0],
        };
        let g = ImportanceField::Scalar.surface_gradient(&m, 0);
        assert!((g - Vec3::new(2.0, 3.0, 0.0)).norm() < 1e-12);
    }

    proptest! {
        /// Interpolation is linear: value at mixed weights equals the mix of
        /// vertex values, and stays within [min, max] of the corners.
        #[test]
        fn barycentric_is_linear_and_bounded(w0 in 0.0f64..1.0, w1 in 0.0f64..1.0) {
            let (w0, w1) = if w0 + w1 > 1.0 { (1.0 - w0, 1.0 - w1) } else { (w0, w1) };
            let w2 = 1.0 - w0 - w1;
            let m = parse_mesh_text(TETRA, &p()).unwrap();
            let v = barycentric_scalar(&m, 3, [w0, w1, w2]).unwrap();
            let t = m.triangles[3];
            let corner: Vec<f64> = t.iter().map(|&i| m.scalars[i as usize]).collect();
            let expect = w0 * corner[0] + w1 * corner[1] + w2 * corner[2];
            prop_assert!((v - expect).abs() < 1e-12);
            let lo = corner.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = corner.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }

        /// Normalization is idempotent up to floating error.
        #[test]
        fn normalize_is_idempotent(scale in 0.1f64..50.0, dx in -20.0f64..20.0) {
            let m = Mesh {
                vertices: vec![
                    Vec3::new(dx, 0.0, 0.0),
                    Vec3::new(dx + scale, 0.0, 0.0),
                    Vec3::new(dx, scale * 0.5, 0.3 * scale),
                    Vec3::new(dx + 0.3 * scale, 0.1 * scale, scale),
                ],
                triangles: vec![[0, 1, 2], [0, 2, 3]],
                scalars: vec![0.0, 1.0, 2.0, 3.0],
            };
            let once = normalize(&m).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.vertices.iter().zip(&twice.vertices) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
