//! Closed tube meshes built from boundary fields, with audits and OBJ/STL I/O.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::centerline::PlaneFrame;
use crate::error::{Error, Result};
use crate::ray_seg::BoundaryField;
use crate::vec3::Vec3;

/// Points closer than this are treated as coincident (mm).
const COINCIDENT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Side surface of a tube before capping; keeps the ring layout.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenTube {
    pub mesh: TriangleMesh,
    pub n: usize,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeAudit {
    pub edges: usize,
    /// undirected edges used by exactly one face
    pub boundary_edges: usize,
    /// undirected edges used by more than two faces
    pub nonmanifold_edges: usize,
    /// directed edges used more than once
    pub repeated_directed_edges: usize,
}

impl EdgeAudit {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0
    }

    pub fn is_consistently_oriented(&self) -> bool {
        self.repeated_directed_edges == 0
    }
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|v| *v >= self.vertices.len()) {
                return Err(Error::InvalidParameter(format!("face {i} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidParameter(format!("face {i} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn edge_audit(&self) -> EdgeAudit {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                *directed.entry((a, b)).or_default() += 1;
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        EdgeAudit {
            edges: undirected.len(),
            boundary_edges: undirected.values().filter(|c| **c == 1).count(),
            nonmanifold_edges: undirected.values().filter(|c| **c > 2).count(),
            repeated_directed_edges: directed.values().filter(|c| **c > 1).count(),
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_audit().edges as i64 + self.faces.len() as i64
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                a.dot(b.cross(c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        (b - a).cross(c - a).normalized().unwrap_or(Vec3::ZERO)
    }

    pub fn flip(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads the `v` and triangular `f` records of an OBJ file.
    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mesh = TriangleMesh::default();
        for (no, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", no + 1));
            match parts.next() {
                Some("v") => {
                    let c: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("invalid vertex"))?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|s| s.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("invalid face"))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(bad("only 1-based triangles are supported"));
                    }
                    mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        mesh.validate().map_err(|e| Error::format(path, e))?;
        Ok(mesh)
    }

    /// Binary little-endian STL with per-facet normals.
    pub fn write_stl(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(84 + 50 * self.faces.len());
        let mut header = [0u8; 80];
        let label = b"fiberseg binary stl";
        header[..label.len()].copy_from_slice(label);
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&(self.faces.len() as u32).to_le_bytes());
        for (i, f) in self.faces.iter().enumerate() {
            let normal = self.face_normal(i);
            for v in std::iter::once(normal).chain(f.iter().map(|i| self.vertices[*i])) {
                for c in v.to_array() {
                    bytes.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
            bytes.extend_from_slice(&0u16.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Boundary positions `[plane][ray]` in world coordinates.
pub fn boundary_points(b: &BoundaryField, frames: &[PlaneFrame]) -> Result<Vec<Vec<Vec3>>> {
    if frames.len() != b.n {
        return Err(Error::InvalidParameter(format!("{} frames for a field with n = {}", frames.len(), b.n)));
    }
    Ok(frames
        .iter()
        .enumerate()
        .map(|(p, f)| (0..b.k).map(|r| f.origin + f.ray_direction(r, b.k) * b.radius(p, r)).collect())
        .collect())
}

fn ring_dims(points: &[Vec<Vec3>]) -> Result<(usize, usize)> {
    let n = points.len();
    let k = points.first().map_or(0, Vec::len);
    if n < 2 || k < 3 || points.iter().any(|ring| ring.len() != k) {
        return Err(Error::InvalidParameter(format!(
            "triangulation needs n >= 2 rings of equal size k >= 3 (n={n}, k={k})"
        )));
    }
    Ok((n, k))
}

fn degenerate(a: Vec3, b: Vec3, c: Vec3) -> bool {
    a.distance(b) <= COINCIDENT_TOLERANCE || b.distance(c) <= COINCIDENT_TOLERANCE || a.distance(c) <= COINCIDENT_TOLERANCE
}

/// Side surface between consecutive rings; vertex `(p, r)` has index `p·k + r`.
pub fn triangulate(points: &[Vec<Vec3>]) -> Result<OpenTube> {
    let (n, k) = ring_dims(points)?;
    let vertices: Vec<Vec3> = points.iter().flatten().copied().collect();
    let id = |p: usize, r: usize| p * k + r;
    let mut faces = Vec::with_capacity(2 * k * (n - 1));
    for p in 0..n - 1 {
        for r in 0..k {
            let r1 = (r + 1) % k;
            for f in [[id(p, r), id(p, r1), id(p + 1, r)], [id(p, r1), id(p + 1, r1), id(p + 1, r)]] {
                if degenerate(vertices[f[0]], vertices[f[1]], vertices[f[2]]) {
                    return Err(Error::DegenerateFace { plane: p });
                }
                faces.push(f);
            }
        }
    }
    Ok(OpenTube { mesh: TriangleMesh { vertices, faces }, n, k })
}

/// Closes both ends with fans around the given centers and orients the
/// result outward.
pub fn cap_ends(tube: &OpenTube, first_origin: Vec3, last_origin: Vec3) -> Result<TriangleMesh> {
    let OpenTube { mesh, n, k } = tube;
    let (n, k) = (*n, *k);
    let mut out = mesh.clone();
    let c0 = out.vertices.len();
    out.vertices.push(first_origin);
    out.vertices.push(last_origin);
    let last = (n - 1) * k;
    for r in 0..k {
        let r1 = (r + 1) % k;
        out.faces.push([c0, r1, r]);
        out.faces.push([c0 + 1, last + r, last + r1]);
    }
    for (i, f) in out.faces[mesh.faces.len()..].iter().enumerate() {
        let [a, b, c] = f.map(|v| out.vertices[v]);
        if degenerate(a, b, c) {
            return Err(Error::DegenerateFace { plane: if i % 2 == 0 { 0 } else { n - 1 } });
        }
    }
    if out.signed_volume() < 0.0 {
        out.flip();
    }
    Ok(out)
}

/// `(plane, ray)` pairs whose point on plane `p + 1` lies behind plane `p`.
pub fn contour_crossings(points: &[Vec<Vec3>], frames: &[PlaneFrame]) -> Vec<(usize, usize)> {
    let mut hits = Vec::new();
    for p in 0..points.len().saturating_sub(1).min(frames.len().saturating_sub(1)) {
        let f = &frames[p];
        for (r, q) in points[p + 1].iter().enumerate() {
            if (*q - f.origin).dot(f.tangent) <= 0.0 {
                hits.push((p, r));
            }
        }
    }
    hits
}

/// Boundary field to closed, outward-oriented mesh.
pub fn build_mesh(b: &BoundaryField, frames: &[PlaneFrame]) -> Result<TriangleMesh> {
    let points = boundary_points(b, frames)?;
    let crossings = contour_crossings(&points, frames);
    if !crossings.is_empty() {
        log::warn!(
            "{} boundary point(s) cross the preceding plane (first at plane {}, ray {}); mesh may self-intersect",
            crossings.len(),
            crossings[0].0,
            crossings[0].1
        );
    }
    let tube = triangulate(&points)?;
    cap_ends(&tube, frames[0].origin, frames[b.n - 1].origin)
}
