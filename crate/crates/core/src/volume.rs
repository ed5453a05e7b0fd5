//! Regular 3D grids of tensors and booleans, trilinear tensor sampling, and
//! the JSON-header + raw-binary volume file format.
//!
//! Voxel data is stored x-fastest: `index = ix + nx * (iy + ny * iz)`.
//! Voxel `(ix, iy, iz)` has its center at `origin + (ix * sx, iy * sy, iz * sz)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DiffusionTensor;
use crate::vec3::Vec3;

/// Geometry shared by every voxel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Vec3,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Vec3) -> Result<Self> {
        let g = VoxelGrid {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "volume dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "voxel spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidParameter("volume origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        Vec3::new(
            self.origin.x + ix as f64 * self.spacing[0],
            self.origin.y + iy as f64 * self.spacing[1],
            self.origin.z + iz as f64 * self.spacing[2],
        )
    }

    pub fn center_of(&self, index: usize) -> Vec3 {
        let [ix, iy, iz] = self.coords(index);
        self.voxel_center(ix, iy, iz)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Continuous voxel coordinates of a world position.
    pub fn continuous_index(&self, p: Vec3) -> [f64; 3] {
        [
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        ]
    }

    /// Whether `p` lies in the box spanned by the outermost voxel centers.
    pub fn contains(&self, p: Vec3) -> bool {
        let c = self.continuous_index(p);
        c.iter()
            .zip(self.dims.iter())
            .all(|(&ci, &n)| ci >= 0.0 && ci <= (n - 1) as f64)
    }

    /// World-space box spanned by the outermost voxel centers.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (self.origin, hi)
    }
}

/// Dense grid of diffusion tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorVolume {
    grid: VoxelGrid,
    data: Vec<DiffusionTensor>,
}

impl TensorVolume {
    pub fn new(grid: VoxelGrid, data: Vec<DiffusionTensor>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if let Some(i) = data.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite tensor at voxel {i}")));
        }
        Ok(TensorVolume { grid, data })
    }

    pub fn from_fn(grid: VoxelGrid, f: impl Fn(usize, usize, usize) -> DiffusionTensor) -> Result<Self> {
        let data = (0..grid.len())
            .map(|i| {
                let [ix, iy, iz] = grid.coords(i);
                f(ix, iy, iz)
            })
            .collect();
        TensorVolume::new(grid, data)
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[DiffusionTensor] {
        &self.data
    }

    pub fn voxel(&self, ix: usize, iy: usize, iz: usize) -> &DiffusionTensor {
        &self.data[self.grid.index(ix, iy, iz)]
    }

    /// Rounds every component through `f32`, matching a write/read cycle.
    pub fn quantized_f32(&self) -> TensorVolume {
        let data = self
            .data
            .iter()
            .map(|t| DiffusionTensor::from_components(t.components().map(|c| c as f32 as f64)))
            .collect();
        TensorVolume {
            grid: self.grid,
            data,
        }
    }

    pub fn write(&self, header_path: &Path) -> Result<()> {
        let values = self
            .data
            .iter()
            .flat_map(|t| t.components().map(|c| c as f32))
            .collect();
        RawVolume::new(self.grid, 6, values)?.write(header_path)
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let raw = RawVolume::read(header_path)?;
        if raw.header.components != 6 {
            return Err(Error::format(
                header_path,
                format!("expected 6 tensor components, found {}", raw.header.components),
            ));
        }
        let data = raw
            .values
            .chunks_exact(6)
            .map(|c| {
                DiffusionTensor::from_components([
                    c[0] as f64,
                    c[1] as f64,
                    c[2] as f64,
                    c[3] as f64,
                    c[4] as f64,
                    c[5] as f64,
                ])
            })
            .collect();
        TensorVolume::new(raw.grid(), data)
    }
}

/// Trilinear interpolation of the six tensor components at a world position.
///
/// Valid positions lie in the box spanned by the outermost voxel centers.
pub fn sample_tensor(vol: &TensorVolume, p: Vec3) -> Result<DiffusionTensor> {
    let grid = &vol.grid;
    if !p.is_finite() || !grid.contains(p) {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    let c = grid.continuous_index(p);
    let mut lo = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = grid.dims[a];
        if n == 1 {
            continue;
        }
        let i = (c[a].floor() as usize).min(n - 2);
        lo[a] = i;
        frac[a] = c[a] - i as f64;
    }

    let mut acc = [0.0f64; 6];
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                if wx == 0.0 {
                    continue;
                }
                let w = wx * wy * wz;
                let t = vol.voxel(lo[0] + dx, lo[1] + dy, lo[2] + dz).components();
                for (a, v) in acc.iter_mut().zip(t.iter()) {
                    *a += w * v;
                }
            }
        }
    }
    Ok(DiffusionTensor::from_components(acc))
}

/// Dense boolean grid (ground truth or voxelized segmentation).
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    grid: VoxelGrid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: VoxelGrid, data: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "mask data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: VoxelGrid) -> Self {
        BinaryMask {
            data: vec![false; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.data[self.grid.index(ix, iy, iz)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn write(&self, header_path: &Path) -> Result<()> {
        let values = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        RawVolume::new(self.grid, 1, values)?.write(header_path)
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let raw = RawVolume::read(header_path)?;
        if raw.header.components != 1 {
            return Err(Error::format(
                header_path,
                format!("expected 1 mask component, found {}", raw.header.components),
            ));
        }
        let data = raw.values.iter().map(|&v| v > 0.5).collect();
        BinaryMask::new(raw.grid(), data)
    }
}

/// JSON header accompanying a `.raw` payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub components: usize,
    pub order: String,
}

/// Untyped volume: header plus interleaved little-endian `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVolume {
    pub header: VolumeHeader,
    pub values: Vec<f32>,
}

impl RawVolume {
    pub fn new(grid: VoxelGrid, components: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() * components {
            return Err(Error::InvalidParameter(format!(
                "{} values do not fill {:?} x {components} components",
                values.len(),
                grid.dims
            )));
        }
        Ok(RawVolume {
            header: VolumeHeader {
                dims: grid.dims,
                spacing: grid.spacing,
                origin: grid.origin.to_array(),
                dtype: "f32".into(),
                components,
                order: "x-fastest".into(),
            },
            values,
        })
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid {
            dims: self.header.dims,
            spacing: self.header.spacing,
            origin: self.header.origin.into(),
        }
    }

    /// Path of the binary payload belonging to a header path.
    pub fn raw_path(header_path: &Path) -> PathBuf {
        header_path.with_extension("raw")
    }

    pub fn write(&self, header_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.header)
            .map_err(|e| Error::format(header_path, e))?;
        fs::write(header_path, json).map_err(|e| Error::io(header_path, e))?;
        let raw_path = Self::raw_path(header_path);
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: VolumeHeader =
            serde_json::from_str(&text).map_err(|e| Error::format(header_path, e))?;
        if header.dtype != "f32" {
            return Err(Error::format(header_path, format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.order != "x-fastest" {
            return Err(Error::format(header_path, format!("unsupported order {:?}", header.order)));
        }
        let grid = VoxelGrid {
            dims: header.dims,
            spacing: header.spacing,
            origin: header.origin.into(),
        };
        grid.validate().map_err(|e| Error::format(header_path, e))?;

        let raw_path = Self::raw_path(header_path);
        let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let expected = grid.len() * header.components * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                &raw_path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(RawVolume { header, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new(dims, [1.0, 2.0, 0.5], Vec3::new(-1.0, 0.5, 2.0)).unwrap()
    }

    fn ramp_volume() -> TensorVolume {
        let g = grid([4, 3, 5]);
        TensorVolume::from_fn(g, |ix, iy, iz| {
            let (x, y, z) = (ix as f64, iy as f64, iz as f64);
            DiffusionTensor::from_components([
                x + 1.0,
                y * 2.0,
                z - 3.0,
                x * y,
                (x - z) * 0.5,
                1.0 + x * y * z,
            ])
        })
        .unwrap()
    }

    #[test]
    fn index_round_trip() {
        let g = grid([4, 3, 5]);
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn voxel_center_sample_is_exact() {
        let vol = ramp_volume();
        let g = *vol.grid();
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            let t = sample_tensor(&vol, g.voxel_center(x, y, z)).unwrap();
            assert_eq!(t, *vol.voxel(x, y, z));
        }
    }

    #[test]
    fn midpoint_is_componentwise_mean() {
        let vol = ramp_volume();
        let g = *vol.grid();
        let p = (g.voxel_center(1, 1, 2) + g.voxel_center(2, 1, 2)) * 0.5;
        let t = sample_tensor(&vol, p).unwrap().components();
        let a = vol.voxel(1, 1, 2).components();
        let b = vol.voxel(2, 1, 2).components();
        for i in 0..6 {
            assert!((t[i] - 0.5 * (a[i] + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_is_error() {
        let vol = ramp_volume();
        let (lo, hi) = vol.grid().bounds();
        assert!(sample_tensor(&vol, lo).is_ok());
        assert!(sample_tensor(&vol, hi).is_ok());
        assert!(matches!(
            sample_tensor(&vol, lo - Vec3::new(1e-6, 0.0, 0.0)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(sample_tensor(&vol, hi + Vec3::new(0.0, 0.0, 1e-6)).is_err());
        assert!(sample_tensor(&vol, Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let g = grid([2, 2, 2]);
        assert!(TensorVolume::new(g, vec![DiffusionTensor::default(); 7]).is_err());
        assert!(BinaryMask::new(g, vec![false; 9]).is_err());
        assert!(VoxelGrid::new([2, 2, 2], [1.0, 0.0, 1.0], Vec3::ZERO).is_err());
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.json");
        let vol = ramp_volume();
        vol.write(&path).unwrap();
        let back = TensorVolume::read(&path).unwrap();
        assert_eq!(back, vol.quantized_f32());
        let bytes = fs::read(dir.path().join("vol.raw")).unwrap();
        assert_eq!(bytes.len(), vol.grid().len() * 6 * 4);
        // first voxel, first component, little endian
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(header["components"], 6);
        assert_eq!(header["order"], "x-fastest");
        assert_eq!(header["dtype"], "f32");
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.json");
        let g = grid([3, 2, 2]);
        let data: Vec<bool> = (0..g.len()).map(|i| i % 3 == 1).collect();
        let mask = BinaryMask::new(g, data).unwrap();
        mask.write(&path).unwrap();
        assert_eq!(BinaryMask::read(&path).unwrap(), mask);
        assert!(TensorVolume::read(&path).is_err());
    }

    #[test]
    fn truncated_raw_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.json");
        ramp_volume().write(&path).unwrap();
        let raw = dir.path().join("vol.raw");
        let mut bytes = fs::read(&raw).unwrap();
        bytes.pop();
        fs::write(&raw, bytes).unwrap();
        assert!(matches!(TensorVolume::read(&path), Err(Error::Format { .. })));
    }
}
