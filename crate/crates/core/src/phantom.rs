//! Synthetic tensor phantoms with exact ground-truth masks.
//!
//! Two shapes are provided: a portion of a torus (center circle in the
//! `z = 0` plane around the world origin, swept counter-clockwise from +x)
//! and a tube around a cubic Bézier curve.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{eigendecompose, DiffusionTensor};
use crate::vec3::Vec3;
use crate::volume::{BinaryMask, TensorVolume, VoxelGrid};

pub const DEFAULT_INSIDE_EIGENVALUES: [f64; 3] = [1.0e-3, 0.2e-3, 0.2e-3];
pub const DEFAULT_OUTSIDE_EIGENVALUES: [f64; 3] = [0.7e-3; 3];

fn default_inside() -> [f64; 3] {
    DEFAULT_INSIDE_EIGENVALUES
}

fn default_outside() -> [f64; 3] {
    DEFAULT_OUTSIDE_EIGENVALUES
}

fn default_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorusPhantomSpec {
    pub major_radius: f64,
    pub tube_radius: f64,
    /// Degrees of the torus swept, starting at +x.
    pub arc_span: f64,
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    pub origin: Vec3,
    #[serde(default = "default_inside")]
    pub inside_eigenvalues: [f64; 3],
    #[serde(default = "default_outside")]
    pub outside_eigenvalues: [f64; 3],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for TorusPhantomSpec {
    fn default() -> Self {
        TorusPhantomSpec {
            major_radius: 40.0,
            tube_radius: 5.0,
            arc_span: 90.0,
            dims: [53, 53, 17],
            spacing: [1.0; 3],
            origin: Vec3::new(-6.0, -6.0, -8.0),
            inside_eigenvalues: DEFAULT_INSIDE_EIGENVALUES,
            outside_eigenvalues: DEFAULT_OUTSIDE_EIGENVALUES,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

impl TorusPhantomSpec {
    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    /// Point of the center circle at `angle_deg`.
    pub fn center_point(&self, angle_deg: f64) -> Vec3 {
        let a = angle_deg.to_radians();
        Vec3::new(self.major_radius * a.cos(), self.major_radius * a.sin(), 0.0)
    }

    /// Unit tangent of the center circle at `angle_deg` (direction of increasing angle).
    pub fn tangent(&self, angle_deg: f64) -> Vec3 {
        let a = angle_deg.to_radians();
        Vec3::new(-a.sin(), a.cos(), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.tube_radius > 0.0 && self.tube_radius < self.major_radius) {
            return bad(format!(
                "need 0 < tube_radius < major_radius, got {} and {}",
                self.tube_radius, self.major_radius
            ));
        }
        if !(self.arc_span > 0.0 && self.arc_span <= 360.0) {
            return bad(format!("arc_span must lie in (0, 360], got {}", self.arc_span));
        }
        validate_common(
            &self.grid(),
            self.inside_eigenvalues,
            self.outside_eigenvalues,
            self.noise_sigma,
        )?;

        let (lo, hi) = self.grid().bounds();
        let steps = 720;
        for i in 0..=steps {
            let c = self.center_point(self.arc_span * i as f64 / steps as f64);
            let r = self.tube_radius;
            if c.x - r < lo.x || c.x + r > hi.x || c.y - r < lo.y || c.y + r > hi.y || -r < lo.z || r > hi.z {
                return bad(format!(
                    "volume box {:?}..{:?} does not contain the torus portion near {:?}",
                    lo.to_array(),
                    hi.to_array(),
                    c.to_array()
                ));
            }
        }
        Ok(())
    }

    /// Local eigenvector frame when `p` lies inside the torus portion.
    pub fn classify(&self, p: Vec3) -> Option<[Vec3; 3]> {
        let rho = p.x.hypot(p.y);
        if rho == 0.0 {
            return None;
        }
        if (rho - self.major_radius).hypot(p.z) > self.tube_radius {
            return None;
        }
        let mut angle = p.y.atan2(p.x).to_degrees();
        if angle < 0.0 {
            angle += 360.0;
        }
        if angle > self.arc_span {
            return None;
        }
        let radial = Vec3::new(p.x / rho, p.y / rho, 0.0);
        let tangent = Vec3::new(-p.y / rho, p.x / rho, 0.0);
        Some([tangent, radial, Vec3::Z])
    }
}

/// Tube of constant radius around a cubic Bézier center curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvedTubePhantomSpec {
    pub control_points: [Vec3; 4],
    pub tube_radius: f64,
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    pub origin: Vec3,
    #[serde(default = "default_inside")]
    pub inside_eigenvalues: [f64; 3],
    #[serde(default = "default_outside")]
    pub outside_eigenvalues: [f64; 3],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

const CURVE_SAMPLES: usize = 256;

impl CurvedTubePhantomSpec {
    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn point(&self, t: f64) -> Vec3 {
        let [p0, p1, p2, p3] = self.control_points;
        let s = 1.0 - t;
        p0 * (s * s * s) + p1 * (3.0 * s * s * t) + p2 * (3.0 * s * t * t) + p3 * (t * t * t)
    }

    pub fn derivative(&self, t: f64) -> Vec3 {
        let [p0, p1, p2, p3] = self.control_points;
        let s = 1.0 - t;
        ((p1 - p0) * (s * s) + (p2 - p1) * (2.0 * s * t) + (p3 - p2) * (t * t)) * 3.0
    }

    fn second_derivative(&self, t: f64) -> Vec3 {
        let [p0, p1, p2, p3] = self.control_points;
        ((p2 - p1 * 2.0 + p0) * (1.0 - t) + (p3 - p2 * 2.0 + p1) * t) * 6.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tube_radius > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "tube_radius must be positive, got {}",
                self.tube_radius
            )));
        }
        if self.control_points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec("control points must be finite".into()));
        }
        validate_common(
            &self.grid(),
            self.inside_eigenvalues,
            self.outside_eigenvalues,
            self.noise_sigma,
        )?;
        let steps = 1024;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let d1 = self.derivative(t);
            let speed = d1.norm();
            if speed < 1e-12 {
                return Err(Error::InvalidSpec(format!(
                    "center curve has a stationary point at t = {t:.4}"
                )));
            }
            let curvature = d1.cross(self.second_derivative(t)).norm() / speed.powi(3);
            if self.tube_radius * curvature >= 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "tube radius {} reaches the local radius of curvature {:.3} at t = {t:.4}",
                    self.tube_radius,
                    1.0 / curvature
                )));
            }
        }
        Ok(())
    }

    /// Curve parameter of the point nearest to `p`.
    pub fn nearest_parameter(&self, p: Vec3) -> f64 {
        let dist2 = |t: f64| (self.point(t) - p).norm_squared();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..=CURVE_SAMPLES {
            let d = dist2(i as f64 / CURVE_SAMPLES as f64);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let n = CURVE_SAMPLES as f64;
        let mut a = best.saturating_sub(1) as f64 / n;
        let mut b = (best + 1).min(CURVE_SAMPLES) as f64 / n;
        // golden-section search on the bracketing interval
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (dist2(c), dist2(d));
        for _ in 0..100 {
            if b - a <= 1e-15 {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = dist2(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = dist2(d);
            }
        }
        let mut t = 0.5 * (a + b);
        // golden section stalls near sqrt(eps); polish with Newton on (B - p)·B'
        for _ in 0..4 {
            let d1 = self.derivative(t);
            let off = self.point(t) - p;
            let g = off.dot(d1);
            let dg = d1.norm_squared() + off.dot(self.second_derivative(t));
            if dg <= 0.0 {
                break;
            }
            let next = (t - g / dg).clamp(0.0, 1.0);
            if dist2(next) > dist2(t) {
                break;
            }
            t = next;
        }
        // endpoints compete with the interior estimate
        [t, 0.0, 1.0]
            .into_iter()
            .min_by(|x, y| dist2(*x).total_cmp(&dist2(*y)))
            .unwrap_or(t)
    }

    pub fn classify(&self, p: Vec3) -> Option<[Vec3; 3]> {
        let t = self.nearest_parameter(p);
        let c = self.point(t);
        if (p - c).norm() > self.tube_radius {
            return None;
        }
        const END_EPS: f64 = 1e-9;
        if t <= END_EPS && (p - self.point(0.0)).dot(self.derivative(0.0)) < 0.0 {
            return None;
        }
        if t >= 1.0 - END_EPS && (p - self.point(1.0)).dot(self.derivative(1.0)) > 0.0 {
            return None;
        }
        let tangent = self.derivative(t).normalized()?;
        Some(orthonormal_frame(tangent))
    }
}

/// Completes a unit tangent to an orthonormal triad using a fixed reference axis.
fn orthonormal_frame(tangent: Vec3) -> [Vec3; 3] {
    let reference = if tangent.x.abs() > 0.9 { Vec3::Y } else { Vec3::X };
    let e2 = (reference - tangent * reference.dot(tangent))
        .normalized()
        .unwrap_or(Vec3::Y);
    let e3 = tangent.cross(e2);
    [tangent, e2, e3]
}

/// Phantom spec tagged by shape, as found in pipeline configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomSpec {
    Torus(TorusPhantomSpec),
    CurvedTube(CurvedTubePhantomSpec),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec::Torus(TorusPhantomSpec::default())
    }
}

impl PhantomSpec {
    pub fn set_rng_seed(&mut self, seed: u64) {
        match self {
            PhantomSpec::Torus(s) => s.rng_seed = seed,
            PhantomSpec::CurvedTube(s) => s.rng_seed = seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PhantomSpec::Torus(s) => s.validate(),
            PhantomSpec::CurvedTube(s) => s.validate(),
        }
    }

    pub fn generate(&self) -> Result<(TensorVolume, BinaryMask)> {
        match self {
            PhantomSpec::Torus(s) => generate_torus_phantom(s),
            PhantomSpec::CurvedTube(s) => generate_curved_tube_phantom(s),
        }
    }
}

fn validate_common(grid: &VoxelGrid, inside: [f64; 3], outside: [f64; 3], noise: f64) -> Result<()> {
    grid.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
    if inside.iter().chain(outside.iter()).any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidSpec("eigenvalues must be finite and non-negative".into()));
    }
    if !(inside[0] > inside[1] && inside[1] >= inside[2]) {
        return Err(Error::InvalidSpec(format!(
            "inside eigenvalues must be descending with λ1 > λ2, got {inside:?}"
        )));
    }
    if !(outside[0] == outside[1] && outside[1] == outside[2]) {
        return Err(Error::InvalidSpec(format!(
            "outside eigenvalues must be isotropic, got {outside:?}"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidSpec(format!("noise_sigma must be >= 0, got {noise}")));
    }
    Ok(())
}

pub fn generate_torus_phantom(spec: &TorusPhantomSpec) -> Result<(TensorVolume, BinaryMask)> {
    spec.validate()?;
    generate(
        spec.grid(),
        spec.inside_eigenvalues,
        spec.outside_eigenvalues,
        spec.noise_sigma,
        spec.rng_seed,
        |p| spec.classify(p),
    )
}

pub fn generate_curved_tube_phantom(spec: &CurvedTubePhantomSpec) -> Result<(TensorVolume, BinaryMask)> {
    spec.validate()?;
    generate(
        spec.grid(),
        spec.inside_eigenvalues,
        spec.outside_eigenvalues,
        spec.noise_sigma,
        spec.rng_seed,
        |p| spec.classify(p),
    )
}

fn generate(
    grid: VoxelGrid,
    inside: [f64; 3],
    outside: [f64; 3],
    noise_sigma: f64,
    seed: u64,
    classify: impl Fn(Vec3) -> Option<[Vec3; 3]> + Sync,
) -> Result<(TensorVolume, BinaryMask)> {
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma * inside[0]).map_err(|e| Error::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    let voxels: Vec<(DiffusionTensor, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let [ix, iy, iz] = grid.coords(i);
            let (clean, is_inside) = match classify(grid.voxel_center(ix, iy, iz)) {
                Some(frame) => (DiffusionTensor::from_eigen(inside, frame), true),
                None => (DiffusionTensor::diagonal(outside[0], outside[1], outside[2]), false),
            };
            let tensor = match &noise {
                Some(dist) => perturb(clean, dist, voxel_seed(seed, ix, iy, iz)),
                None => clean,
            };
            (tensor, is_inside)
        })
        .collect();
    let (tensors, mask): (Vec<_>, Vec<_>) = voxels.into_iter().unzip();
    Ok((TensorVolume::new(grid, tensors)?, BinaryMask::new(grid, mask)?))
}

/// Adds Gaussian noise to each component, then floors negative eigenvalues at zero.
fn perturb(t: DiffusionTensor, dist: &Normal<f64>, seed: u64) -> DiffusionTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = t.components();
    for v in c.iter_mut() {
        *v += dist.sample(&mut rng);
    }
    let noisy = DiffusionTensor::from_components(c);
    match eigendecompose(&noisy) {
        Ok(es) if es.lambda3 < 0.0 => {
            DiffusionTensor::from_eigen(es.values().map(|l| l.max(0.0)), es.vectors())
        }
        _ => noisy,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-voxel RNG seed; independent of iteration order.
fn voxel_seed(seed: u64, ix: usize, iy: usize, iz: usize) -> u64 {
    let mut h = splitmix64(seed);
    for v in [ix, iy, iz] {
        h = splitmix64(h ^ v as u64);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fractional_anisotropy;
    use crate::volume::sample_tensor;

    fn fa_inside() -> f64 {
        let [a, b, c] = DEFAULT_INSIDE_EIGENVALUES;
        fractional_anisotropy(a, b, c)
    }

    #[test]
    fn torus_center_voxel() {
        let spec = TorusPhantomSpec::default();
        let (vol, mask) = generate_torus_phantom(&spec).unwrap();
        // (40, 0, 0) sits on a voxel center at the start of the arc; (0, 40, 0) at the end
        let g = *vol.grid();
        for (p, tangent) in [(Vec3::new(40.0, 0.0, 0.0), Vec3::Y), (Vec3::new(0.0, 40.0, 0.0), -Vec3::X)] {
            let c = g.continuous_index(p).map(|v| v.round() as usize);
            assert!(mask.get(c[0], c[1], c[2]));
            let es = eigendecompose(vol.voxel(c[0], c[1], c[2])).unwrap();
            assert!((es.fa() - fa_inside()).abs() < 1e-9);
            assert!(es.e1.dot(tangent).abs() > 1.0 - 1e-12);
        }
        // diagonal center point at 45° (not on a voxel center): sampled tensor direction
        let p = spec.center_point(45.0);
        let es = eigendecompose(&sample_tensor(&vol, p).unwrap()).unwrap();
        assert!(es.e1.dot(spec.tangent(45.0)).abs() > 0.999);
    }

    #[test]
    fn torus_outside_is_isotropic() {
        let spec = TorusPhantomSpec::default();
        let (vol, mask) = generate_torus_phantom(&spec).unwrap();
        // 2 * tube radius from the circle at angle 0
        let c = vol.grid().continuous_index(Vec3::new(30.0, 0.0, 0.0)).map(|v| v.round() as usize);
        assert!(!mask.get(c[0], c[1], c[2]));
        assert_eq!(vol.voxel(c[0], c[1], c[2]).fa().unwrap(), 0.0);
    }

    #[test]
    fn torus_voxel_count_matches_tube_volume() {
        let spec = TorusPhantomSpec::default();
        let (_, mask) = generate_torus_phantom(&spec).unwrap();
        let arc_len = spec.major_radius * spec.arc_span.to_radians();
        let analytic = std::f64::consts::PI * 25.0 * arc_len;
        let counted = mask.count() as f64;
        assert!((counted - analytic).abs() / analytic < 0.05, "{counted} vs {analytic}");
    }

    #[test]
    fn noiseless_fa_is_exact_inside_and_zero_outside() {
        let spec = TorusPhantomSpec::default();
        let (vol, mask) = generate_torus_phantom(&spec).unwrap();
        for (t, &m) in vol.data().iter().zip(mask.data()) {
            let fa = t.fa().unwrap();
            if m {
                assert!((fa - fa_inside()).abs() < 1e-12);
            } else {
                assert_eq!(fa, 0.0);
            }
        }
    }

    #[test]
    fn mask_matches_analytic_predicate_exhaustively() {
        let spec = TorusPhantomSpec {
            major_radius: 6.0,
            tube_radius: 2.0,
            arc_span: 200.0,
            dims: [22, 22, 6],
            spacing: [0.8, 0.8, 1.0],
            origin: Vec3::new(-8.4, -8.4, -2.5),
            ..TorusPhantomSpec::default()
        };
        let (_, mask) = generate_torus_phantom(&spec).unwrap();
        let g = spec.grid();
        for i in 0..g.len() {
            let p = g.center_of(i);
            let rho = (p.x * p.x + p.y * p.y).sqrt();
            let d = ((rho - 6.0).powi(2) + p.z * p.z).sqrt();
            let mut ang = p.y.atan2(p.x).to_degrees();
            if ang < 0.0 {
                ang += 360.0;
            }
            assert_eq!(mask.data()[i], d <= 2.0 && ang <= 200.0, "voxel {i} at {p:?}");
        }
    }

    #[test]
    fn torus_spec_validation() {
        let ok = TorusPhantomSpec::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TorusPhantomSpec { tube_radius: 40.0, ..ok.clone() },
            TorusPhantomSpec { arc_span: 0.0, ..ok.clone() },
            TorusPhantomSpec { arc_span: 361.0, ..ok.clone() },
            TorusPhantomSpec { inside_eigenvalues: [1e-3, 1e-3, 1e-3], ..ok.clone() },
            TorusPhantomSpec { outside_eigenvalues: [1e-3, 0.5e-3, 0.5e-3], ..ok.clone() },
            TorusPhantomSpec { noise_sigma: -0.1, ..ok.clone() },
            TorusPhantomSpec { dims: [30, 53, 17], ..ok.clone() },
        ] {
            assert!(matches!(generate_torus_phantom(&bad), Err(Error::InvalidSpec(_))), "{bad:?}");
        }
    }

    #[test]
    fn noise_is_deterministic_and_psd() {
        let spec = TorusPhantomSpec {
            noise_sigma: 0.3,
            rng_seed: 7,
            ..TorusPhantomSpec::default()
        };
        let (a, _) = generate_torus_phantom(&spec).unwrap();
        let (b, _) = generate_torus_phantom(&spec).unwrap();
        assert_eq!(a, b);
        for t in a.data() {
            assert!(eigendecompose(t).unwrap().lambda3 >= -1e-15);
        }
        let (c, _) = generate_torus_phantom(&TorusPhantomSpec { rng_seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spec_json_keys() {
        let json = r#"{"major_radius": 40, "tube_radius": 5, "arc_span": 90,
            "dims": [53, 53, 17], "spacing": [1, 1, 1], "origin": [-6, -6, -8],
            "inside_eigenvalues": [0.001, 0.0002, 0.0002],
            "outside_eigenvalues": [0.0007, 0.0007, 0.0007],
            "noise_sigma": 0.0, "rng_seed": 3}"#;
        let spec: TorusPhantomSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec, TorusPhantomSpec { rng_seed: 3, ..TorusPhantomSpec::default() });
        assert!(serde_json::from_str::<TorusPhantomSpec>(r#"{"radius": 1}"#).is_err());
        let partial: TorusPhantomSpec = serde_json::from_str(r#"{"noise_sigma": 0.1}"#).unwrap();
        assert_eq!(partial, TorusPhantomSpec { noise_sigma: 0.1, ..TorusPhantomSpec::default() });
    }

    fn straight_tube() -> CurvedTubePhantomSpec {
        CurvedTubePhantomSpec {
            control_points: [
                Vec3::new(0.0, 0.0, -6.0),
                Vec3::new(0.0, 0.0, -2.0),
                Vec3::new(0.0, 0.0, 2.0),
                Vec3::new(0.0, 0.0, 6.0),
            ],
            tube_radius: 3.0,
            dims: [11, 11, 17],
            spacing: [1.0; 3],
            origin: Vec3::new(-5.0, -5.0, -8.0),
            inside_eigenvalues: DEFAULT_INSIDE_EIGENVALUES,
            outside_eigenvalues: DEFAULT_OUTSIDE_EIGENVALUES,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    #[test]
    fn straight_curve_equals_cylinder() {
        let spec = straight_tube();
        let (vol, mask) = generate_curved_tube_phantom(&spec).unwrap();
        let [l1, l2, l3] = DEFAULT_INSIDE_EIGENVALUES;
        let iso = DEFAULT_OUTSIDE_EIGENVALUES[0];
        let g = spec.grid();
        for i in 0..g.len() {
            let p = g.center_of(i);
            let inside = p.x * p.x + p.y * p.y <= 9.0 && (-6.0..=6.0).contains(&p.z);
            assert_eq!(mask.data()[i], inside, "{p:?}");
            let expected = if inside {
                DiffusionTensor::diagonal(l2, l3, l1)
            } else {
                DiffusionTensor::isotropic(iso)
            };
            assert_eq!(vol.data()[i], expected, "{p:?}");
        }
    }

    #[test]
    fn mirror_symmetric_curve_gives_symmetric_mask() {
        let spec = CurvedTubePhantomSpec {
            control_points: [
                Vec3::new(-12.0, 0.0, 0.0),
                Vec3::new(-6.0, 10.0, 0.0),
                Vec3::new(6.0, 10.0, 0.0),
                Vec3::new(12.0, 0.0, 0.0),
            ],
            tube_radius: 2.3,
            dims: [31, 17, 7],
            spacing: [1.0; 3],
            origin: Vec3::new(-15.0, -3.0, -3.0),
            ..straight_tube()
        };
        let (vol, mask) = generate_curved_tube_phantom(&spec).unwrap();
        assert!(mask.count() > 100);
        let [nx, ny, nz] = spec.dims;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    assert_eq!(mask.get(ix, iy, iz), mask.get(nx - 1 - ix, iy, iz));
                }
            }
        }
        // centerline voxel FA
        let c = vol.grid().continuous_index(spec.point(0.5)).map(|v| v.round() as usize);
        assert!(mask.get(c[0], c[1], c[2]));
        assert!((vol.voxel(c[0], c[1], c[2]).fa().unwrap() - fa_inside()).abs() < 1e-6);
    }

    #[test]
    fn tight_curve_rejected() {
        let spec = CurvedTubePhantomSpec {
            control_points: [
                Vec3::new(-2.0, 0.0, 0.0),
                Vec3::new(-2.0, 4.0, 0.0),
                Vec3::new(2.0, 4.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            tube_radius: 4.0,
            dims: [20, 20, 10],
            origin: Vec3::new(-10.0, -6.0, -5.0),
            ..straight_tube()
        };
        assert!(matches!(generate_curved_tube_phantom(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn curved_tube_centerline_fa() {
        let spec = CurvedTubePhantomSpec {
            control_points: [
                Vec3::new(-10.0, 0.0, 0.0),
                Vec3::new(-3.0, 6.0, 1.0),
                Vec3::new(4.0, -2.0, -1.0),
                Vec3::new(10.0, 3.0, 0.0),
            ],
            tube_radius: 2.0,
            dims: [27, 17, 9],
            origin: Vec3::new(-13.0, -6.0, -4.0),
            ..straight_tube()
        };
        let (vol, _) = generate_curved_tube_phantom(&spec).unwrap();
        for i in 1..10 {
            let p = spec.point(i as f64 / 10.0);
            let t = sample_tensor(&vol, p).unwrap();
            let es = eigendecompose(&t).unwrap();
            // sampled between voxel centers: direction follows the tangent
            assert!(es.e1.dot(spec.derivative(i as f64 / 10.0).normalized().unwrap()).abs() > 0.98);
        }
        let g = *vol.grid();
        let mut checked = 0;
        for i in 0..g.len() {
            let p = g.center_of(i);
            let t = spec.nearest_parameter(p);
            if (spec.point(t) - p).norm() < 0.5 && t > 0.01 && t < 0.99 {
                assert!((vol.data()[i].fa().unwrap() - fa_inside()).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
