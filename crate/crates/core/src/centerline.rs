//! Bundle centerline by averaging arc-length-resampled fibers, and
//! rotation-minimizing plane frames along it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::Streamline;
use crate::vec3::Vec3;

const MIN_SEGMENT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub points: Vec<Vec3>,
}

impl Centerline {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a centerline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[0].distance(w[1]) < MIN_SEGMENT) {
            return Err(Error::DegenerateTangent { index: i });
        }
        Ok(Centerline { points })
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

/// Plane through a centerline sample, perpendicular to the local tangent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub tangent: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl PlaneFrame {
    /// Unit direction of ray `r` out of `k` (angle `2πr/k` from `u` towards `v`).
    pub fn ray_direction(&self, r: usize, k: usize) -> Vec3 {
        let (c, s) = ray_angle_cos_sin(r, k);
        self.u * c + self.v * s
    }
}

/// `(cos, sin)` of `2πr/k`, exact at quarter turns.
pub fn ray_angle_cos_sin(r: usize, k: usize) -> (f64, f64) {
    let r = r % k;
    if (4 * r).is_multiple_of(k) {
        match 4 * r / k {
            0 => return (1.0, 0.0),
            1 => return (0.0, 1.0),
            2 => return (-1.0, 0.0),
            _ => return (0.0, -1.0),
        }
    }
    let a = std::f64::consts::TAU * r as f64 / k as f64;
    (a.cos(), a.sin())
}

/// Resamples a polyline to `count` points equally spaced in arc length.
///
/// Endpoints are kept exactly.
pub fn resample_polyline(points: &[Vec3], count: usize) -> Result<Vec<Vec3>> {
    if count < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {count}")));
    }
    if points.len() < 2 {
        return Err(Error::InvalidParameter("polyline needs at least 2 points".into()));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(0.0);
    for w in points.windows(2) {
        let last = *cumulative.last().unwrap_or(&0.0);
        cumulative.push(last + w[0].distance(w[1]));
    }
    let total = *cumulative.last().unwrap_or(&0.0);
    if total < MIN_SEGMENT {
        return Err(Error::InvalidParameter("polyline has zero length".into()));
    }

    let mut out = Vec::with_capacity(count);
    out.push(points[0]);
    let mut seg = 0;
    for i in 1..count - 1 {
        let target = total * i as f64 / (count - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 { (target - cumulative[seg]) / len } else { 0.0 };
        out.push(points[seg].lerp(points[seg + 1], t.clamp(0.0, 1.0)));
    }
    out.push(points[points.len() - 1]);
    Ok(out)
}

/// Pointwise mean of all fibers after arc-length resampling to `samples_per_fiber` points.
pub fn compute_centerline(fibers: &[Streamline], samples_per_fiber: usize) -> Result<Centerline> {
    if fibers.is_empty() {
        return Err(Error::EmptyBundle("no fibers to average".into()));
    }
    let mut sum = vec![Vec3::ZERO; samples_per_fiber.max(2)];
    for f in fibers {
        let resampled = resample_polyline(&f.points, samples_per_fiber)?;
        for (acc, p) in sum.iter_mut().zip(resampled) {
            *acc += p;
        }
    }
    let n = fibers.len() as f64;
    Centerline::new(sum.into_iter().map(|p| p / n).collect())
}

/// `n` samples at equal arc-length spacing, first and last point included.
pub fn sample_centerline(c: &Centerline, n: usize) -> Result<Centerline> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("centerline sample count must be >= 2, got {n}")));
    }
    Centerline::new(resample_polyline(&c.points, n)?)
}

/// Reference direction for the first frame's `u` axis.
fn reference_axis(tangent: Vec3) -> Vec3 {
    if tangent.dot(Vec3::X).abs() > 0.9 {
        Vec3::Y
    } else {
        Vec3::X
    }
}

/// Plane frames along the sampled centerline.
///
/// Tangents are forward differences (the last copied from its predecessor);
/// `u`/`v` are carried from plane to plane with the double-reflection
/// rotation-minimizing scheme so ray indices stay aligned without twist.
pub fn build_frames(samples: &Centerline) -> Result<Vec<PlaneFrame>> {
    let pts = &samples.points;
    let n = pts.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 centerline samples".into()));
    }
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let t = (pts[i + 1] - pts[i])
            .normalized()
            .filter(|_| pts[i].distance(pts[i + 1]) >= MIN_SEGMENT)
            .ok_or(Error::DegenerateTangent { index: i })?;
        tangents.push(t);
    }
    tangents.push(tangents[n - 2]);

    let t0 = tangents[0];
    let reference = reference_axis(t0);
    let mut u = (reference - t0 * reference.dot(t0))
        .normalized()
        .ok_or(Error::DegenerateTangent { index: 0 })?;

    let mut frames = Vec::with_capacity(n);
    frames.push(PlaneFrame {
        origin: pts[0],
        tangent: t0,
        u,
        v: t0.cross(u),
    });
    for i in 0..n - 1 {
        u = double_reflection(pts[i], pts[i + 1], tangents[i], tangents[i + 1], u);
        let t = tangents[i + 1];
        // re-orthonormalize against drift
        let u_clean = (u - t * u.dot(t)).normalized().unwrap_or(u);
        u = u_clean;
        frames.push(PlaneFrame {
            origin: pts[i + 1],
            tangent: t,
            u,
            v: t.cross(u),
        });
    }
    Ok(frames)
}

/// One step of the double-reflection rotation-minimizing frame update.
fn double_reflection(x0: Vec3, x1: Vec3, t0: Vec3, t1: Vec3, r0: Vec3) -> Vec3 {
    let v1 = x1 - x0;
    let c1 = v1.dot(v1);
    if c1 == 0.0 {
        return r0;
    }
    let r_l = r0 - v1 * (2.0 / c1 * v1.dot(r0));
    let t_l = t0 - v1 * (2.0 / c1 * v1.dot(t0));
    let v2 = t1 - t_l;
    let c2 = v2.dot(v2);
    if c2 <= 1e-30 {
        return r_l;
    }
    r_l - v2 * (2.0 / c2 * v2.dot(r_l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[[f64; 3]]) -> Centerline {
        Centerline::new(points.iter().map(|&p| p.into()).collect()).unwrap()
    }

    #[test]
    fn single_fiber_centerline_is_resampled_fiber() {
        let f = Streamline::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 3.0, 0.0)]);
        let c = compute_centerline(std::slice::from_ref(&f), 5).unwrap();
        assert_eq!(c.points, resample_polyline(&f.points, 5).unwrap());
        assert_eq!(c.points[2], Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn parallel_fibers_average_to_midline() {
        let a = Streamline::new((0..11).map(|i| Vec3::new(i as f64, 1.0, 0.0)).collect());
        let b = Streamline::new((0..7).map(|i| Vec3::new(i as f64 * 10.0 / 6.0, -1.0, 0.0)).collect());
        let c = compute_centerline(&[a, b], 21).unwrap();
        for (i, p) in c.points.iter().enumerate() {
            assert!(p.y.abs() < 1e-12);
            assert!((p.x - i as f64 * 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn centerline_is_permutation_invariant() {
        let fibers: Vec<Streamline> = (0..4)
            .map(|k| Streamline::new((0..9).map(|i| Vec3::new(i as f64, k as f64 * 0.3, (i * k) as f64 * 0.01)).collect()))
            .collect();
        let a = compute_centerline(&fibers, 13).unwrap();
        let mut rev = fibers.clone();
        rev.reverse();
        let b = compute_centerline(&rev, 13).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(p.distance(*q) < 1e-12);
        }
    }

    #[test]
    fn empty_bundle_rejected() {
        assert!(matches!(compute_centerline(&[], 10), Err(Error::EmptyBundle(_))));
    }

    #[test]
    fn sampling_endpoints_and_spacing() {
        let c = line(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.0, 0.0, 8.0]]);
        let two = sample_centerline(&c, 2).unwrap();
        assert_eq!(two.points, vec![c.points[0], c.points[2]]);
        let five = sample_centerline(&c, 5).unwrap();
        for w in five.points.windows(2) {
            assert!((w[0].distance(w[1]) - 2.0).abs() < 1e-12);
        }
        assert!(matches!(sample_centerline(&c, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn sampling_arc_lengths_equal_on_bent_polyline() {
        let c = line(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [3.0, 4.0, 0.0], [3.0, 4.0, 1.5], [0.0, 0.0, 1.5]]);
        let s = sample_centerline(&c, 23).unwrap();
        // numeric arc length of the original between consecutive samples
        let arc = |p: Vec3| -> f64 {
            let mut acc = 0.0;
            for w in c.points.windows(2) {
                let seg = w[1] - w[0];
                let t = (p - w[0]).dot(seg) / seg.norm_squared();
                let q = w[0] + seg * t.clamp(0.0, 1.0);
                if q.distance(p) < 1e-9 {
                    return acc + seg.norm() * t.clamp(0.0, 1.0);
                }
                acc += seg.norm();
            }
            panic!("sample off polyline");
        };
        let l = c.length();
        let step = l / 22.0;
        for (i, p) in s.points.iter().enumerate() {
            assert!((arc(*p) - step * i as f64).abs() <= 1e-9 * l);
        }
        assert_eq!(s.points[0], c.points[0]);
        assert_eq!(s.points[22], c.points[4]);
    }

    #[test]
    fn straight_frames_along_z() {
        let c = line(&[[0.0, 0.0, 0.0], [0.0, 0.0, 10.0]]);
        let frames = build_frames(&sample_centerline(&c, 6).unwrap()).unwrap();
        for f in frames {
            assert_eq!(f.tangent, Vec3::Z);
            assert_eq!(f.u, Vec3::X);
            assert_eq!(f.v, Vec3::Y);
        }
    }

    #[test]
    fn reference_switches_for_x_aligned_tangent() {
        let c = line(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let frames = build_frames(&c).unwrap();
        assert_eq!(frames[0].u, Vec3::Y);
        assert_eq!(frames[0].v, Vec3::Z);
    }

    #[test]
    fn degenerate_samples_rejected() {
        let c = Centerline { points: vec![Vec3::ZERO, Vec3::X, Vec3::X, Vec3::Y] };
        assert!(matches!(build_frames(&c), Err(Error::DegenerateTangent { index: 1 })));
    }

    fn arc_samples(n: usize) -> Centerline {
        // quarter circle of radius 20 in the xy plane
        Centerline::new(
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64;
                    Vec3::new(20.0 * a.cos(), 20.0 * a.sin(), 0.0)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn frames_are_orthonormal_right_handed() {
        let c = line(&[[0.0, 0.0, 0.0], [3.0, 1.0, 0.0], [5.0, 4.0, 2.0], [5.0, 8.0, 5.0], [1.0, 9.0, 9.0]]);
        for f in build_frames(&sample_centerline(&c, 40).unwrap()).unwrap() {
            assert!(f.u.dot(f.tangent).abs() <= 1e-9);
            assert!(f.v.dot(f.tangent).abs() <= 1e-9);
            assert!((f.u.cross(f.v) - f.tangent).norm() <= 1e-9);
            assert!((f.u.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn planar_arc_keeps_in_plane_axis() {
        // z is never within 0.9 of x here, so reference x projects into the arc plane
        let frames = build_frames(&arc_samples(30)).unwrap();
        for f in &frames {
            assert!(f.u.z.abs() < 1e-12, "{:?}", f.u);
            assert!((f.v.z.abs() - 1.0).abs() < 1e-12);
        }
        // dense oracle: same rule at 10x sampling; shared planes agree
        let dense = build_frames(&arc_samples(291)).unwrap();
        for (i, f) in frames.iter().enumerate().take(29) {
            let g = dense[i * 10];
            assert!(f.origin.distance(g.origin) < 1e-9);
            assert!(f.v.dot(g.v) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn frame_rotation_is_minimal_on_helix() {
        // for each step the u-update must equal the minimal rotation taking t_i to t_{i+1}
        let c = Centerline::new(
            (0..60)
                .map(|i| {
                    let a = i as f64 * 0.15;
                    Vec3::new(8.0 * a.cos(), 8.0 * a.sin(), 1.5 * a)
                })
                .collect(),
        )
        .unwrap();
        let frames = build_frames(&c).unwrap();
        for w in frames.windows(2) {
            let (t0, t1, u0) = (w[0].tangent, w[1].tangent, w[0].u);
            let cos = t0.dot(t1);
            let expected = u0 - (t0 + t1) * (u0.dot(t1) / (1.0 + cos));
            assert!((expected - w[1].u).norm() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_directions_are_exact() {
        let f = PlaneFrame { origin: Vec3::ZERO, tangent: Vec3::Z, u: Vec3::new(0.6, 0.8, 0.0), v: Vec3::new(-0.8, 0.6, 0.0) };
        assert_eq!(f.ray_direction(0, 4), f.u);
        assert_eq!(f.ray_direction(1, 4), f.v);
        assert_eq!(f.ray_direction(2, 4), -f.u);
        assert_eq!(f.ray_direction(3, 4), -f.v);
    }
}
