//! Pipeline configuration and the table of shipped defaults.
//!
//! | setting | default |
//! |---|---|
//! | phantom | torus, major radius 40 mm, tube radius 5 mm, 90° arc, 1 mm voxels, dims 53×53×17, origin (-6, -6, -8) |
//! | phantom eigenvalues | inside (1.0, 0.2, 0.2)·10⁻³ mm²/s, outside 0.7·10⁻³ isotropic |
//! | noise_sigma / rng_seed | 0 / 0 |
//! | seed region | regular octagon, radius 4 mm, in the cross-section plane at 45° |
//! | include regions | regular octagons, radius 8 mm, cross-section planes at 10° and 80° |
//! | tracking | step 0.5 mm, FA stop 0.15, angle stop 45°, 2000 steps, 4 seeds/mm² |
//! | samples_per_fiber | 50 |
//! | grid | n = 30 planes, k = 36 rays, m = 40 samples, d = 0.5 mm |
//! | ray thresholds | t_fa 0.3, t_alpha_c 40°, t_alpha_n 30°, window from voxel diagonal / d |
//! | ray corrections | in-plane and intra-plane on, max_ratio 1.5 |
//! | graph | delta_ray 1, delta_plane 1, lambda_weight 1.0 |
//! | repeat | 1 |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_seg::SmoothnessParams;
use crate::phantom::{PhantomSpec, TorusPhantomSpec};
use crate::ray_seg::RayThresholds;
use crate::raygrid::{window_size, GridParams};
use crate::tracking::{PlanarRegion, TrackingParams};

/// Cross-section polygon of a torus phantom at `angle_deg`, facing along the
/// tube.
pub fn torus_cross_section(spec: &TorusPhantomSpec, angle_deg: f64, radius: f64, sides: usize) -> PlanarRegion {
    let a = angle_deg.to_radians();
    let radial = crate::Vec3::new(a.cos(), a.sin(), 0.0);
    PlanarRegion::regular_polygon(spec.center_point(angle_deg), spec.tangent(angle_deg), radial, radius, sides)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regions {
    pub seed: PlanarRegion,
    pub include: [PlanarRegion; 2],
}

impl Default for Regions {
    fn default() -> Self {
        let torus = TorusPhantomSpec::default();
        Regions {
            seed: torus_cross_section(&torus, 45.0, 4.0, 8),
            include: [
                torus_cross_section(&torus, 10.0, 8.0, 8),
                torus_cross_section(&torus, 80.0, 8.0, 8),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterlineSettings {
    pub samples_per_fiber: usize,
}

impl Default for CenterlineSettings {
    fn default() -> Self {
        CenterlineSettings { samples_per_fiber: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaySettings {
    pub t_fa: f64,
    pub t_alpha_c: f64,
    pub t_alpha_n: f64,
    /// derived from the voxel diagonal when absent
    pub window: Option<usize>,
    pub in_plane_correction: bool,
    pub intra_plane_correction: bool,
    pub max_ratio: f64,
}

impl Default for RaySettings {
    fn default() -> Self {
        RaySettings {
            t_fa: 0.3,
            t_alpha_c: 40.0,
            t_alpha_n: 30.0,
            window: None,
            in_plane_correction: true,
            intra_plane_correction: true,
            max_ratio: 1.5,
        }
    }
}

impl RaySettings {
    pub fn thresholds(&self, voxel_spacing: [f64; 3], d: f64) -> Result<RayThresholds> {
        let r = match self.window {
            Some(r) => r,
            None => window_size(voxel_spacing, d)?,
        };
        let th = RayThresholds { t_fa: self.t_fa, t_alpha_c: self.t_alpha_c, t_alpha_n: self.t_alpha_n, r };
        th.validate()?;
        Ok(th)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub delta_ray: usize,
    pub delta_plane: usize,
    pub lambda_weight: f64,
    /// also write the flow network as `graph.dimacs`
    pub dump_dimacs: bool,
}

impl Default for GraphSettings {
    fn default() -> Self {
        GraphSettings { delta_ray: 1, delta_plane: 1, lambda_weight: 1.0, dump_dimacs: false }
    }
}

impl GraphSettings {
    pub fn smoothness(&self) -> SmoothnessParams {
        SmoothnessParams { delta_ray: self.delta_ray, delta_plane: self.delta_plane }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub phantom: PhantomSpec,
    /// tensor volume header to use instead of generating the phantom
    pub input_volume: Option<PathBuf>,
    /// ground-truth mask header paired with `input_volume`
    pub ground_truth: Option<PathBuf>,
    pub regions: Regions,
    pub tracking: TrackingParams,
    pub centerline: CenterlineSettings,
    pub grid: GridParams,
    pub ray: RaySettings,
    pub graph: GraphSettings,
    pub output_dir: PathBuf,
    /// overrides the phantom noise seed
    pub rng_seed: Option<u64>,
    /// number of consecutive noise seeds run by `pipeline`
    pub repeat: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            phantom: PhantomSpec::default(),
            input_volume: None,
            ground_truth: None,
            regions: Regions::default(),
            tracking: TrackingParams::default(),
            centerline: CenterlineSettings::default(),
            grid: GridParams::default(),
            ray: RaySettings::default(),
            graph: GraphSettings::default(),
            output_dir: PathBuf::from("out"),
            rng_seed: None,
            repeat: 1,
        }
    }
}

impl PipelineConfig {
    /// Parses and validates a JSON config. Relative paths inside it are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input_volume, &mut cfg.ground_truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.input_volume {
            Some(p) if !p.exists() => return Err(Error::InvalidParameter(format!("input volume {} does not exist", p.display()))),
            Some(_) => {}
            None => self.phantom.validate()?,
        }
        if let Some(p) = &self.ground_truth {
            if !p.exists() {
                return Err(Error::InvalidParameter(format!("ground truth {} does not exist", p.display())));
            }
        }
        self.regions.seed.validate()?;
        for r in &self.regions.include {
            r.validate()?;
        }
        self.tracking.validate()?;
        if self.centerline.samples_per_fiber < 2 {
            return Err(Error::InvalidParameter("samples_per_fiber must be >= 2".into()));
        }
        self.grid.validate()?;
        self.ray.thresholds([1.0; 3], self.grid.d)?;
        if !(self.ray.max_ratio > 1.0 && self.ray.max_ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!("max_ratio must be > 1, got {}", self.ray.max_ratio)));
        }
        if !(self.graph.lambda_weight > 0.0 && self.graph.lambda_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_weight must be > 0, got {}",
                self.graph.lambda_weight
            )));
        }
        if self.repeat == 0 {
            return Err(Error::InvalidParameter("repeat must be >= 1".into()));
        }
        Ok(())
    }

    /// Phantom spec with the configured noise seed applied.
    pub fn phantom_for_seed(&self, seed: Option<u64>) -> PhantomSpec {
        let mut spec = self.phantom.clone();
        if let Some(s) = seed.or(self.rng_seed) {
            spec.set_rng_seed(s);
        }
        spec
    }

    pub fn base_seed(&self) -> u64 {
        match &self.phantom_for_seed(None) {
            PhantomSpec::Torus(s) => s.rng_seed,
            PhantomSpec::CurvedTube(s) => s.rng_seed,
        }
    }
}
