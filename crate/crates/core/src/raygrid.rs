//! The plane × ray × depth lattice of evaluation points and their
//! per-point FA / angle attributes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::PlaneFrame;
use crate::error::{Error, Result};
use crate::tensor::{angle_between_principal, eigendecompose, DIRECTION_FA_EPSILON};
use crate::vec3::Vec3;
use crate::volume::{sample_tensor, RawVolume, TensorVolume, VoxelGrid};

/// Angle assigned when a direction is unavailable or unreliable (degrees).
pub const SENTINEL_ANGLE: f64 = 90.0;

// FA value stored in attribute dumps for points outside the volume.
const OUTSIDE_MARKER: f32 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// planes
    pub n: usize,
    /// rays per plane
    pub k: usize,
    /// samples per ray
    pub m: usize,
    /// sample spacing along a ray (mm)
    pub d: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { n: 30, k: 36, m: 40, d: 0.5 }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k < 3 || self.m < 2 || !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid needs n >= 2, k >= 3, m >= 2, d > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        self.n * self.k
    }

    pub fn len(&self) -> usize {
        self.n * self.k * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(plane, ray, depth)`; depth is fastest.
    pub fn index(&self, p: usize, r: usize, j: usize) -> usize {
        (p * self.k + r) * self.m + j
    }

    /// Distance from the centerline of depth sample `j`.
    pub fn depth(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.d
    }

    pub fn max_radius(&self) -> f64 {
        self.m as f64 * self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub position: Vec3,
    pub fa: f64,
    /// degrees, against the in-plane centerline point
    pub alpha_c: f64,
    /// degrees, against the previous point on the ray
    pub alpha_n: f64,
    pub in_bounds: bool,
}

impl EvalPoint {
    fn outside(position: Vec3) -> Self {
        EvalPoint {
            position,
            fa: 0.0,
            alpha_c: SENTINEL_ANGLE,
            alpha_n: SENTINEL_ANGLE,
            in_bounds: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub params: GridParams,
    pub frames: Vec<PlaneFrame>,
    pub points: Vec<EvalPoint>,
}

impl EvalGrid {
    pub fn point(&self, p: usize, r: usize, j: usize) -> &EvalPoint {
        &self.points[self.params.index(p, r, j)]
    }

    /// The `m` points of one ray, ordered outward.
    pub fn column(&self, p: usize, r: usize) -> &[EvalPoint] {
        let start = self.params.index(p, r, 0);
        &self.points[start..start + self.params.m]
    }

    pub fn position(&self, p: usize, r: usize, j: usize) -> Vec3 {
        lattice_position(&self.frames[p], &self.params, r, j)
    }

    /// Writes the `(fa, alpha_c, alpha_n)` attributes in the volume format,
    /// dims `[m, k, n]` so depth is the fastest axis.
    pub fn write_attributes(&self, header_path: &Path) -> Result<()> {
        let gp = &self.params;
        let values = self
            .points
            .iter()
            .flat_map(|q| {
                let fa = if q.in_bounds { q.fa as f32 } else { OUTSIDE_MARKER };
                [fa, q.alpha_c as f32, q.alpha_n as f32]
            })
            .collect();
        let grid = VoxelGrid {
            dims: [gp.m, gp.k, gp.n],
            spacing: [gp.d, 1.0, 1.0],
            origin: Vec3::ZERO,
        };
        RawVolume::new(grid, 3, values)?.write(header_path)
    }

    /// Rebuilds a grid from an attribute dump plus the frames it was built on.
    pub fn read_attributes(header_path: &Path, frames: Vec<PlaneFrame>) -> Result<Self> {
        let raw = RawVolume::read(header_path)?;
        if raw.header.components != 3 {
            return Err(Error::format(header_path, "grid dump needs 3 components per node"));
        }
        let [m, k, n] = raw.header.dims;
        let params = GridParams { n, k, m, d: raw.header.spacing[0] };
        params.validate().map_err(|e| Error::format(header_path, e))?;
        if frames.len() != n {
            return Err(Error::format(
                header_path,
                format!("grid has {n} planes but {} frames were supplied", frames.len()),
            ));
        }
        let mut points = Vec::with_capacity(params.len());
        for (i, c) in raw.values.chunks_exact(3).enumerate() {
            let j = i % m;
            let r = (i / m) % k;
            let p = i / (m * k);
            let (fa, alpha_c, alpha_n) = (c[0] as f64, c[1] as f64, c[2] as f64);
            let in_bounds = c[0] != OUTSIDE_MARKER;
            points.push(EvalPoint {
                position: lattice_position(&frames[p], &params, r, j),
                fa: if in_bounds { fa } else { 0.0 },
                alpha_c,
                alpha_n,
                in_bounds,
            });
        }
        Ok(EvalGrid { params, frames, points })
    }
}

fn lattice_position(frame: &PlaneFrame, gp: &GridParams, r: usize, j: usize) -> Vec3 {
    frame.origin + frame.ray_direction(r, gp.k) * gp.depth(j)
}

/// Principal direction and FA at `p`, `None` when outside the volume.
fn probe(vol: &TensorVolume, p: Vec3) -> Result<Option<(f64, Vec3)>> {
    match sample_tensor(vol, p) {
        Ok(t) => {
            let es = eigendecompose(&t)?;
            Ok(Some((es.fa(), es.e1)))
        }
        Err(Error::OutOfBounds { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn reliable(fa: f64, dir: Vec3) -> Option<Vec3> {
    (fa >= DIRECTION_FA_EPSILON).then_some(dir)
}

fn angle_or_sentinel(a: Option<Vec3>, b: Option<Vec3>) -> Result<f64> {
    match (a, b) {
        (Some(a), Some(b)) => angle_between_principal(a, b),
        _ => Ok(SENTINEL_ANGLE),
    }
}

/// Samples the volume on the lattice and attaches FA, `alpha_c` and `alpha_n`.
pub fn build_grid(vol: &TensorVolume, frames: &[PlaneFrame], gp: &GridParams) -> Result<EvalGrid> {
    gp.validate()?;
    if frames.len() != gp.n {
        return Err(Error::InvalidGrid(format!(
            "{} frames supplied for n = {}",
            frames.len(),
            gp.n
        )));
    }
    let center_dirs: Vec<Option<Vec3>> = frames
        .iter()
        .enumerate()
        .map(|(p, f)| match probe(vol, f.origin)? {
            Some((fa, dir)) => Ok(reliable(fa, dir)),
            None => Err(Error::InvalidGrid(format!(
                "origin of plane {p} at {:?} lies outside the volume",
                f.origin.to_array()
            ))),
        })
        .collect::<Result<_>>()?;

    let columns: Vec<Vec<EvalPoint>> = (0..gp.columns())
        .into_par_iter()
        .map(|col| {
            let (p, r) = (col / gp.k, col % gp.k);
            let frame = &frames[p];
            let center = center_dirs[p];
            let mut prev = center;
            let mut out = Vec::with_capacity(gp.m);
            for j in 0..gp.m {
                let position = lattice_position(frame, gp, r, j);
                match probe(vol, position)? {
                    Some((fa, dir)) => {
                        let dir = reliable(fa, dir);
                        out.push(EvalPoint {
                            position,
                            fa,
                            alpha_c: angle_or_sentinel(dir, center)?,
                            alpha_n: angle_or_sentinel(dir, prev)?,
                            in_bounds: true,
                        });
                        prev = dir;
                    }
                    None => {
                        out.push(EvalPoint::outside(position));
                        prev = None;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    Ok(EvalGrid {
        params: *gp,
        frames: frames.to_vec(),
        points: columns.into_iter().flatten().collect(),
    })
}

/// Window length `ceil(voxel diagonal / d)`, at least 1.
pub fn window_size(spacing: [f64; 3], d: f64) -> Result<usize> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("sample spacing must be > 0, got {d}")));
    }
    if spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter(format!("voxel spacing must be > 0, got {spacing:?}")));
    }
    let diagonal = spacing.iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(((diagonal / d).ceil() as usize).max(1))
}
