//! Voxelization of boundary fields, Dice overlap and per-method aggregation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::{ray_angle_cos_sin, PlaneFrame};
use crate::error::{Error, Result};
use crate::ray_seg::BoundaryField;
use crate::tracking::PlanarRegion;
use crate::vec3::Vec3;
use crate::volume::{BinaryMask, VoxelGrid};

fn nearest_plane(frames: &[PlaneFrame], x: Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (p, f) in frames.iter().enumerate() {
        let d = (x - f.origin).norm_squared();
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Radius of plane `p` at in-plane angle `theta`, interpolated between the
/// two enclosing rays.
fn radius_at(b: &BoundaryField, p: usize, theta: f64) -> f64 {
    let step = std::f64::consts::TAU / b.k as f64;
    let s = theta.rem_euclid(std::f64::consts::TAU) / step;
    let lo = (s.floor() as usize).min(b.k - 1);
    let w = (s - lo as f64).clamp(0.0, 1.0);
    (1.0 - w) * b.radius(p, lo) + w * b.radius(p, (lo + 1) % b.k)
}

fn inside(b: &BoundaryField, frames: &[PlaneFrame], x: Vec3) -> bool {
    let first = &frames[0];
    let last = &frames[frames.len() - 1];
    if (x - first.origin).dot(first.tangent) < 0.0 || (x - last.origin).dot(last.tangent) > 0.0 {
        return false;
    }
    let p = nearest_plane(frames, x);
    let f = &frames[p];
    let q = x - f.origin;
    let (a, c) = (q.dot(f.u), q.dot(f.v));
    let radial = a.hypot(c);
    let limit = radius_at(b, p, c.atan2(a));
    limit > 0.0 && radial <= limit
}

/// Marks voxel centers that fall inside the star-shaped per-plane contours.
pub fn voxelize(b: &BoundaryField, frames: &[PlaneFrame], grid: &VoxelGrid) -> Result<BinaryMask> {
    b.validate()?;
    grid.validate()?;
    if frames.len() != b.n {
        return Err(Error::InvalidParameter(format!("{} frames for a field with n = {}", frames.len(), b.n)));
    }
    let data = (0..grid.len())
        .into_par_iter()
        .map(|i| inside(b, frames, grid.center_of(i)))
        .collect();
    BinaryMask::new(*grid, data)
}

/// Radii of the analytic tube: every ray ends at `radius` (clamped to the
/// field range). Handy as an exact reference boundary.
pub fn constant_field(n: usize, k: usize, m: usize, d: f64, radius: f64) -> Result<BoundaryField> {
    BoundaryField::new(n, k, m, d, vec![radius.clamp(0.0, m as f64 * d); n * k], "analytic")
}

/// Restricts `mask` to the slab between two planes, with the normals
/// oriented from `a` toward `b`.
pub fn cutout(mask: &BinaryMask, a: &PlanarRegion, b: &PlanarRegion) -> Result<BinaryMask> {
    let toward = b.origin - a.origin;
    let orient = |n: Vec3| if n.dot(toward) < 0.0 { -n } else { n };
    let (na, nb) = (orient(a.normal), orient(b.normal));
    let grid = mask.grid();
    let data = mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, keep)| {
            let x = grid.center_of(i);
            *keep && (x - a.origin).dot(na) >= 0.0 && (x - b.origin).dot(nb) <= 0.0
        })
        .collect();
    BinaryMask::new(*grid, data)
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (ga, gb) = (a.grid(), b.grid());
    if ga.dims != gb.dims || ga.spacing != gb.spacing || ga.origin != gb.origin {
        return Err(Error::IncompatibleMasks(format!(
            "dims {:?} / {:?}, spacing {:?} / {:?}, origin {:?} / {:?}",
            ga.dims,
            gb.dims,
            ga.spacing,
            gb.spacing,
            ga.origin.to_array(),
            gb.origin.to_array()
        )));
    }
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub config_id: String,
    pub method: String,
    /// fraction in [0, 1]
    pub dsc: f64,
}

/// Per-method statistics, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub min: f64,
    pub max: f64,
    pub average: f64,
    pub std_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub summaries: Vec<MethodSummary>,
    pub std_dev_kind: String,
}

/// Groups records by method (sorted by name) and summarizes each group.
pub fn aggregate(records: &[EvalRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut methods: Vec<&str> = records.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let summaries = methods
        .into_iter()
        .map(|method| {
            let mut values: Vec<f64> = records.iter().filter(|r| r.method == method).map(|r| 100.0 * r.dsc).collect();
            // fixed summation order keeps the result permutation-independent
            values.sort_by(f64::total_cmp);
            let n = values.len() as f64;
            let average = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - average).powi(2)).sum::<f64>() / n;
            MethodSummary {
                method: method.to_string(),
                runs: values.len(),
                min: values[0],
                max: values[values.len() - 1],
                average,
                std_dev: var.sqrt(),
            }
        })
        .collect();
    Ok(EvalReport {
        records: records.to_vec(),
        summaries,
        std_dev_kind: "population (divisor N)".into(),
    })
}

type Column = fn(&MethodSummary) -> f64;

fn column_label(method: &str) -> String {
    match method {
        "ray" => "ray-based approach".into(),
        "graph" => "graph-based approach".into(),
        other => other.to_string(),
    }
}

impl EvalReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Aligned table with one column per method.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<&MethodSummary> = self.summaries.iter().collect();
        // ray first, as in the usual presentation
        cols.sort_by_key(|s| (s.method != "ray", s.method != "graph", s.method.clone()));
        let mut out = String::new();
        let _ = write!(out, "{:<20}", "");
        for s in &cols {
            let _ = write!(out, "{:>24}", column_label(&s.method));
        }
        out.push('\n');
        let rows: [(&str, Column); 4] = [
            ("min DSC(%)", |s| s.min),
            ("max DSC(%)", |s| s.max),
            ("average DSC(%)", |s| s.average),
            ("standard deviation", |s| s.std_dev),
        ];
        for (label, get) in rows {
            let _ = write!(out, "{label:<20}");
            for s in &cols {
                let _ = write!(out, "{:>24.3}", get(s));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{:<20}{}", "runs", cols.iter().map(|s| format!("{:>24}", s.runs)).collect::<String>());
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// Ray directions at quarter turns are exact, so this is the angle of ray `r`.
pub fn ray_angle(r: usize, k: usize) -> f64 {
    let (c, s) = ray_angle_cos_sin(r, k);
    s.atan2(c)
}
