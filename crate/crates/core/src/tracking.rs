//! Deterministic streamline tracking from a planar seed region, plus
//! restriction and cropping of the result by two include regions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{angle_between_principal, eigendecompose};
use crate::vec3::Vec3;
use crate::volume::{sample_tensor, TensorVolume};

const BASIS_TOLERANCE: f64 = 1e-6;

/// Polygon lying in a plane, given in the plane's `(u, v)` coordinates (mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarRegion {
    pub origin: Vec3,
    pub normal: Vec3,
    pub basis_u: Vec3,
    pub basis_v: Vec3,
    pub polygon: Vec<[f64; 2]>,
}

impl PlanarRegion {
    /// Regular polygon of `sides` vertices with circumradius `radius`.
    pub fn regular_polygon(origin: Vec3, normal: Vec3, basis_u: Vec3, radius: f64, sides: usize) -> Self {
        let basis_v = normal.cross(basis_u);
        let polygon = (0..sides)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / sides as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        PlanarRegion {
            origin,
            normal,
            basis_u,
            basis_v,
            polygon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRegion(m));
        for (name, v) in [("normal", self.normal), ("basis_u", self.basis_u), ("basis_v", self.basis_v)] {
            if !v.is_finite() || (v.norm() - 1.0).abs() > BASIS_TOLERANCE {
                return bad(format!("{name} must be a unit vector, got {:?}", v.to_array()));
            }
        }
        if self.normal.dot(self.basis_u).abs() > BASIS_TOLERANCE
            || self.normal.dot(self.basis_v).abs() > BASIS_TOLERANCE
            || self.basis_u.dot(self.basis_v).abs() > BASIS_TOLERANCE
        {
            return bad("normal, basis_u and basis_v must be mutually orthogonal".into());
        }
        if !self.origin.is_finite() {
            return bad("origin must be finite".into());
        }
        let n = self.polygon.len();
        if n < 3 {
            return bad(format!("polygon needs at least 3 vertices, got {n}"));
        }
        if self.polygon.iter().flatten().any(|c| !c.is_finite()) {
            return bad("polygon vertices must be finite".into());
        }
        if self.area() <= 1e-12 {
            return bad("polygon has zero area".into());
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (a, b) = (self.polygon[i], self.polygon[(i + 1) % n]);
                let (c, d) = (self.polygon[j], self.polygon[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return bad(format!("polygon edges {i} and {j} intersect"));
                }
            }
        }
        Ok(())
    }

    /// Absolute polygon area (mm²).
    pub fn area(&self) -> f64 {
        let n = self.polygon.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.polygon[i];
                let b = self.polygon[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        0.5 * twice.abs()
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.origin).dot(self.normal)
    }

    pub fn to_plane(&self, p: Vec3) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(self.basis_u), d.dot(self.basis_v)]
    }

    pub fn to_world(&self, uv: [f64; 2]) -> Vec3 {
        self.origin + self.basis_u * uv[0] + self.basis_v * uv[1]
    }

    /// Even-odd point-in-polygon test in plane coordinates.
    pub fn contains_uv(&self, uv: [f64; 2]) -> bool {
        let n = self.polygon.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (pi, pj) = (self.polygon[i], self.polygon[j]);
            if (pi[1] > uv[1]) != (pj[1] > uv[1]) {
                let x = pj[0] + (uv[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
                if uv[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Where segment `a → b` passes through the polygon, as the segment parameter.
    pub fn crossing(&self, a: Vec3, b: Vec3) -> Option<f64> {
        let sa = self.signed_distance(a);
        let sb = self.signed_distance(b);
        if (sa >= 0.0) == (sb >= 0.0) {
            return None;
        }
        let t = sa / (sa - sb);
        let q = a.lerp(b, t);
        self.contains_uv(self.to_plane(q)).then_some(t)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Polyline traced through the principal-direction field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Streamline {
    pub points: Vec<Vec3>,
}

impl Streamline {
    pub fn new(points: Vec<Vec3>) -> Self {
        Streamline { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingParams {
    /// mm
    pub step_size: f64,
    pub fa_stop: f64,
    /// degrees
    pub angle_stop: f64,
    pub max_steps: usize,
    /// seed points per mm²
    pub seed_density: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            step_size: 0.5,
            fa_stop: 0.15,
            angle_stop: 45.0,
            max_steps: 2000,
            seed_density: 4.0,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fa_stop) {
            return Err(Error::InvalidParameter(format!("fa_stop must lie in [0, 1], got {}", self.fa_stop)));
        }
        if !(self.angle_stop >= 0.0) {
            return Err(Error::InvalidParameter("angle_stop must be >= 0".into()));
        }
        if !(self.seed_density > 0.0 && self.seed_density.is_finite()) {
            return Err(Error::InvalidParameter("seed_density must be > 0".into()));
        }
        Ok(())
    }
}

/// Regular grid of seeds (spacing `1/√density`) clipped to the region polygon.
pub fn seed_points(region: &PlanarRegion, density: f64) -> Result<Vec<Vec3>> {
    region.validate()?;
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidParameter(format!("seed density must be > 0, got {density}")));
    }
    let spacing = 1.0 / density.sqrt();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &region.polygon {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let nu = ((hi[0] - lo[0]) / spacing).ceil() as usize;
    let nv = ((hi[1] - lo[1]) / spacing).ceil() as usize;
    let mut seeds = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            let uv = [lo[0] + (i as f64 + 0.5) * spacing, lo[1] + (j as f64 + 0.5) * spacing];
            if uv[0] <= hi[0] && uv[1] <= hi[1] && region.contains_uv(uv) {
                seeds.push(region.to_world(uv));
            }
        }
    }
    Ok(seeds)
}

/// Bidirectional fixed-step Euler integration of the principal direction.
///
/// Returns an empty streamline when the seed's FA is below `fa_stop`.
pub fn track_fiber(vol: &TensorVolume, seed: Vec3, params: &TrackingParams) -> Result<Streamline> {
    params.validate()?;
    let es = eigendecompose(&sample_tensor(vol, seed)?)?;
    if es.fa() < params.fa_stop {
        return Ok(Streamline::default());
    }
    let forward = walk(vol, seed, es.e1, params)?;
    let backward = walk(vol, seed, -es.e1, params)?;

    let mut points = Vec::with_capacity(forward.len() + backward.len() + 1);
    points.extend(backward.into_iter().rev());
    points.push(seed);
    points.extend(forward);
    Ok(Streamline::new(points))
}

fn walk(vol: &TensorVolume, seed: Vec3, initial: Vec3, params: &TrackingParams) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    let mut x = seed;
    let mut dir = initial;
    for _ in 0..params.max_steps {
        let next = x + dir * params.step_size;
        let Ok(tensor) = sample_tensor(vol, next) else {
            break;
        };
        let es = eigendecompose(&tensor)?;
        if es.fa() < params.fa_stop {
            break;
        }
        points.push(next);
        let mut next_dir = es.e1;
        if next_dir.dot(dir) < 0.0 {
            next_dir = -next_dir;
        }
        if angle_between_principal(next_dir, dir)? > params.angle_stop {
            break;
        }
        x = next;
        dir = next_dir;
    }
    Ok(points)
}

/// Tracks from every seed concurrently; empty streamlines are dropped.
pub fn track_all(vol: &TensorVolume, seeds: &[Vec3], params: &TrackingParams) -> Result<Vec<Streamline>> {
    let fibers: Result<Vec<Streamline>> = seeds.par_iter().map(|&s| track_fiber(vol, s, params)).collect();
    Ok(fibers?.into_iter().filter(|f| !f.is_empty()).collect())
}

struct Crossing {
    segment: usize,
    t: f64,
}

fn crossings(fiber: &Streamline, region: &PlanarRegion) -> Vec<Crossing> {
    fiber
        .points
        .windows(2)
        .enumerate()
        .filter_map(|(segment, w)| region.crossing(w[0], w[1]).map(|t| Crossing { segment, t }))
        .collect()
}

/// Keeps fibers passing through both include polygons and crops each to the
/// part between its crossings, oriented from `a` to `b`.
pub fn restrict_and_crop(fibers: &[Streamline], a: &PlanarRegion, b: &PlanarRegion) -> Result<Vec<Streamline>> {
    a.validate()?;
    b.validate()?;
    let kept: Vec<Streamline> = fibers.iter().filter_map(|f| crop_fiber(f, a, b)).collect();
    if kept.is_empty() {
        return Err(Error::EmptyBundle(format!(
            "none of {} fibers passes through both include regions",
            fibers.len()
        )));
    }
    Ok(kept)
}

fn crop_fiber(fiber: &Streamline, a: &PlanarRegion, b: &PlanarRegion) -> Option<Streamline> {
    let ca = crossings(fiber, a);
    let cb = crossings(fiber, b);
    let mut best: Option<(&Crossing, &Crossing)> = None;
    for x in &ca {
        for y in &cb {
            let gap = x.segment.abs_diff(y.segment);
            if best.is_none_or(|(bx, by)| gap < bx.segment.abs_diff(by.segment)) {
                best = Some((x, y));
            }
        }
    }
    let (xa, xb) = best?;
    let p = &fiber.points;
    let qa = p[xa.segment].lerp(p[xa.segment + 1], xa.t);
    let qb = p[xb.segment].lerp(p[xb.segment + 1], xb.t);

    let mut out = vec![qa];
    if xa.segment < xb.segment {
        out.extend_from_slice(&p[xa.segment + 1..=xb.segment]);
    } else if xa.segment > xb.segment {
        out.extend(p[xb.segment + 1..=xa.segment].iter().rev().copied());
    }
    out.push(qb);
    out.dedup_by(|x, y| x.distance(*y) < 1e-12);
    (out.len() >= 2).then(|| Streamline::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_torus_phantom, TorusPhantomSpec};
    use crate::tensor::DiffusionTensor;
    use crate::volume::VoxelGrid;

    fn z_plane(z: f64, half: f64) -> PlanarRegion {
        PlanarRegion {
            origin: Vec3::new(0.0, 0.0, z),
            normal: Vec3::Z,
            basis_u: Vec3::X,
            basis_v: Vec3::Y,
            polygon: vec![[-half, -half], [half, -half], [half, half], [-half, half]],
        }
    }

    fn straight_tube_volume() -> TensorVolume {
        // anisotropic along z inside radius 3 of the z axis
        let grid = VoxelGrid::new([13, 13, 41], [1.0; 3], Vec3::new(-6.0, -6.0, -20.0)).unwrap();
        TensorVolume::from_fn(grid, |ix, iy, _| {
            let (x, y) = (ix as f64 - 6.0, iy as f64 - 6.0);
            if x * x + y * y <= 9.0 {
                DiffusionTensor::diagonal(0.2e-3, 0.2e-3, 1e-3)
            } else {
                DiffusionTensor::isotropic(0.7e-3)
            }
        })
        .unwrap()
    }

    #[test]
    fn square_seeds() {
        let seeds = seed_points(&z_plane(0.0, 5.0), 1.0).unwrap();
        assert_eq!(seeds.len(), 100);
        assert!(seeds.iter().all(|s| s.x.abs() < 5.0 && s.y.abs() < 5.0 && s.z == 0.0));
    }

    #[test]
    fn triangle_seeds_inside() {
        let mut r = z_plane(0.0, 1.0);
        r.polygon = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let seeds = seed_points(&r, 4.0).unwrap();
        assert!(!seeds.is_empty());
        for s in seeds {
            assert!(s.x > 0.0 && s.y > 0.0 && s.x + s.y < 1.0);
        }
    }

    #[test]
    fn seed_count_matches_monte_carlo_area() {
        use rand::{Rng, SeedableRng};
        let mut r = z_plane(0.0, 1.0);
        r.polygon = vec![[0.0, 0.0], [7.0, 1.0], [5.0, 6.0], [2.5, 3.0], [-1.0, 5.0]];
        let density = 4.0;
        let seeds = seed_points(&r, density).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (lo, hi) = ([-1.0, 0.0], [7.0, 6.0]);
        let trials = 200_000;
        let hits = (0..trials)
            .filter(|_| {
                let u = rng.random_range(lo[0]..hi[0]);
                let v = rng.random_range(lo[1]..hi[1]);
                r.contains_uv([u, v])
            })
            .count();
        let area = hits as f64 / trials as f64 * (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let expected = area * density;
        let got = seeds.len() as f64;
        assert!((got - expected).abs() / expected < 0.15, "{got} vs {expected}");
    }

    #[test]
    fn degenerate_regions_rejected() {
        let mut r = z_plane(0.0, 1.0);
        r.polygon = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(seed_points(&r, 1.0), Err(Error::InvalidRegion(_))));
        r.polygon = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(seed_points(&r, 1.0).is_err());
        // bow-tie
        r.polygon = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(seed_points(&r, 1.0).is_err());
        let mut r = z_plane(0.0, 1.0);
        r.basis_u = Vec3::new(1.0, 0.0, 0.5);
        assert!(r.validate().is_err());
    }

    #[test]
    fn straight_tube_tracking_is_collinear() {
        let vol = straight_tube_volume();
        let params = TrackingParams::default();
        let seed = Vec3::new(0.0, 0.0, 0.3);
        let f = track_fiber(&vol, seed, &params).unwrap();
        assert!(f.len() > 70);
        for p in &f.points {
            assert!(p.x.abs() < 1e-6 && p.y.abs() < 1e-6);
        }
        for w in f.points.windows(2) {
            let d = w[0].distance(w[1]);
            assert!(d > 0.0 && d <= 2.0 * params.step_size);
        }
        assert!(f.points.contains(&seed));
    }

    #[test]
    fn background_seed_gives_empty_streamline() {
        let vol = straight_tube_volume();
        let f = track_fiber(&vol, Vec3::new(5.0, 5.0, 0.0), &TrackingParams::default()).unwrap();
        assert!(f.is_empty());
        assert!(matches!(
            track_fiber(&vol, Vec3::new(50.0, 0.0, 0.0), &TrackingParams::default()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn torus_tracking_stays_near_circle() {
        let spec = TorusPhantomSpec::default();
        let (vol, _) = generate_torus_phantom(&spec).unwrap();
        let params = TrackingParams::default();
        let f = track_fiber(&vol, spec.center_point(45.0), &params).unwrap();
        assert!(f.len() > 100);
        let mut max_dev: f64 = 0.0;
        for p in &f.points {
            let rho = p.x.hypot(p.y);
            let dev = (rho - spec.major_radius).hypot(p.z);
            assert!(dev <= spec.tube_radius);
            max_dev = max_dev.max(dev);
        }
        assert!(max_dev <= 2.0 * params.step_size, "max deviation {max_dev}");
    }

    #[test]
    fn tracking_is_deterministic() {
        let spec = TorusPhantomSpec { noise_sigma: 0.1, rng_seed: 4, ..TorusPhantomSpec::default() };
        let (vol, _) = generate_torus_phantom(&spec).unwrap();
        let seed = spec.center_point(40.0) + Vec3::new(0.3, 0.1, -0.7);
        let a = track_fiber(&vol, seed, &TrackingParams::default()).unwrap();
        let b = track_fiber(&vol, seed, &TrackingParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_tube_length_between_planes() {
        let vol = straight_tube_volume();
        let params = TrackingParams::default();
        let f = track_fiber(&vol, Vec3::new(0.5, -0.5, 0.1), &params).unwrap();
        let cropped = restrict_and_crop(&[f], &z_plane(-10.0, 4.0), &z_plane(12.0, 4.0)).unwrap();
        assert!((cropped[0].length() - 22.0).abs() <= params.step_size);
    }

    #[test]
    fn crop_endpoints_on_planes_and_oriented() {
        let fiber = Streamline::new((0..21).map(|i| Vec3::new(0.1, 0.2, i as f64 - 10.3)).collect());
        let a = z_plane(4.0, 1.0);
        let b = z_plane(-3.0, 1.0);
        let out = restrict_and_crop(&[fiber], &a, &b).unwrap();
        let pts = &out[0].points;
        assert!(a.signed_distance(pts[0]).abs() < 1e-12);
        assert!(b.signed_distance(*pts.last().unwrap()).abs() < 1e-12);
        assert!(pts[0].z > pts[pts.len() - 1].z);
        assert_eq!(pts.len(), 2 + 7);
    }

    #[test]
    fn fibers_missing_a_region_are_dropped() {
        let through = Streamline::new((0..21).map(|i| Vec3::new(0.0, 0.0, i as f64 - 10.0)).collect());
        let short = Streamline::new((0..8).map(|i| Vec3::new(0.0, 0.0, i as f64 - 10.0)).collect());
        let outside = Streamline::new((0..21).map(|i| Vec3::new(3.0, 0.0, i as f64 - 10.0)).collect());
        let a = z_plane(-5.5, 1.0);
        let b = z_plane(5.5, 1.0);
        let out = restrict_and_crop(&[through.clone(), short.clone(), outside.clone()], &a, &b).unwrap();
        assert_eq!(out.len(), 1);
        assert!(matches!(restrict_and_crop(&[short, outside], &a, &b), Err(Error::EmptyBundle(_))));
    }
}
