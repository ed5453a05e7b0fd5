//! Symmetric 3×3 diffusion tensors, their eigensystems and the fractional
//! anisotropy measure.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Below this FA a tensor's principal direction is considered unreliable.
pub const DIRECTION_FA_EPSILON: f64 = 1e-3;

const JACOBI_TOLERANCE: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Symmetric diffusion tensor stored as its six unique components (mm²/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiffusionTensor {
    pub dxx: f64,
    pub dyy: f64,
    pub dzz: f64,
    pub dxy: f64,
    pub dxz: f64,
    pub dyz: f64,
}

impl DiffusionTensor {
    /// Builds a tensor, rejecting non-finite components.
    pub fn new(dxx: f64, dyy: f64, dzz: f64, dxy: f64, dxz: f64, dyz: f64) -> Result<Self> {
        let t = DiffusionTensor {
            dxx,
            dyy,
            dzz,
            dxy,
            dxz,
            dyz,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self::from_components([a, b, c, 0.0, 0.0, 0.0])
    }

    pub fn isotropic(value: f64) -> Self {
        Self::diagonal(value, value, value)
    }

    /// Components in storage order `dxx, dyy, dzz, dxy, dxz, dyz`.
    pub fn from_components(c: [f64; 6]) -> Self {
        DiffusionTensor {
            dxx: c[0],
            dyy: c[1],
            dzz: c[2],
            dxy: c[3],
            dxz: c[4],
            dyz: c[5],
        }
    }

    pub fn components(&self) -> [f64; 6] {
        [self.dxx, self.dyy, self.dzz, self.dxy, self.dxz, self.dyz]
    }

    /// `Σ λᵢ eᵢ eᵢᵀ` for the given eigenpairs.
    pub fn from_eigen(lambdas: [f64; 3], vectors: [Vec3; 3]) -> Self {
        let mut c = [0.0; 6];
        for (l, e) in lambdas.iter().zip(vectors.iter()) {
            c[0] += l * e.x * e.x;
            c[1] += l * e.y * e.y;
            c[2] += l * e.z * e.z;
            c[3] += l * e.x * e.y;
            c[4] += l * e.x * e.z;
            c[5] += l * e.y * e.z;
        }
        Self::from_components(c)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.dxx, self.dxy, self.dxz],
            [self.dxy, self.dyy, self.dyz],
            [self.dxz, self.dyz, self.dzz],
        ]
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.dxx * v.x + self.dxy * v.y + self.dxz * v.z,
            self.dxy * v.x + self.dyy * v.y + self.dyz * v.z,
            self.dxz * v.x + self.dyz * v.y + self.dzz * v.z,
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        let off = self.dxy * self.dxy + self.dxz * self.dxz + self.dyz * self.dyz;
        (self.dxx * self.dxx + self.dyy * self.dyy + self.dzz * self.dzz + 2.0 * off).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }

    fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidTensor(format!(
                "non-finite component in {:?}",
                self.components()
            )))
        }
    }

    pub fn fa(&self) -> Result<f64> {
        let es = eigendecompose(self)?;
        Ok(es.fa())
    }
}

/// Eigenvalues sorted descending with matching unit eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSystem {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl EigenSystem {
    pub fn values(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn vectors(&self) -> [Vec3; 3] {
        [self.e1, self.e2, self.e3]
    }

    pub fn fa(&self) -> f64 {
        fractional_anisotropy(self.lambda1, self.lambda2, self.lambda3)
    }

    pub fn reconstruct(&self) -> DiffusionTensor {
        DiffusionTensor::from_eigen(self.values(), self.vectors())
    }
}

/// Diagonalizes a symmetric tensor with cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending. Each eigenvector's largest
/// magnitude component is made positive so results are deterministic.
pub fn eigendecompose(d: &DiffusionTensor) -> Result<EigenSystem> {
    d.validate()?;
    let mut a = d.matrix();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let target = JACOBI_TOLERANCE * d.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (2.0 * (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2])).sqrt();
        if off <= target || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            jacobi_rotate(&mut a, &mut v, p, q);
        }
    }

    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|i| (a[i][i], canonical_sign(Vec3::new(v[0][i], v[1][i], v[2][i]))))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));

    Ok(EigenSystem {
        lambda1: pairs[0].0,
        lambda2: pairs[1].0,
        lambda3: pairs[2].0,
        e1: pairs[0].1,
        e2: pairs[1].1,
        e3: pairs[2].1,
    })
}

fn jacobi_rotate(a: &mut [[f64; 3]; 3], v: &mut [[f64; 3]; 3], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let r = 3 - p - q;

    let arp = a[r][p];
    let arq = a[r][q];
    a[p][p] -= t * apq;
    a[q][q] += t * apq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    a[r][p] = c * arp - s * arq;
    a[p][r] = a[r][p];
    a[r][q] = s * arp + c * arq;
    a[q][r] = a[r][q];

    for row in v.iter_mut() {
        let vp = row[p];
        let vq = row[q];
        row[p] = c * vp - s * vq;
        row[q] = s * vp + c * vq;
    }
}

fn canonical_sign(e: Vec3) -> Vec3 {
    let c = e.to_array();
    let mut idx = 0;
    for i in 1..3 {
        if c[i].abs() > c[idx].abs() {
            idx = i;
        }
    }
    if c[idx] < 0.0 {
        -e
    } else {
        e
    }
}

/// Fractional anisotropy of an eigenvalue triple, clamped to `[0, 1]`.
///
/// The all-zero triple (background) maps to 0.
pub fn fractional_anisotropy(l1: f64, l2: f64, l3: f64) -> f64 {
    let den = 2.0 * (l1 * l1 + l2 * l2 + l3 * l3);
    if den == 0.0 {
        log::trace!("FA of an all-zero eigenvalue triple requested; returning 0");
        return 0.0;
    }
    let num = (l1 - l2).powi(2) + (l2 - l3).powi(2) + (l1 - l3).powi(2);
    (num / den).sqrt().clamp(0.0, 1.0)
}

/// Principal eigenvector `e1`.
pub fn principal_direction(d: &DiffusionTensor) -> Result<Vec3> {
    Ok(eigendecompose(d)?.e1)
}

/// Angle in degrees between two axes, ignoring orientation (result in `[0, 90]`).
pub fn angle_between_principal(u: Vec3, v: Vec3) -> Result<f64> {
    let u = u.normalized().ok_or(Error::InvalidDirection)?;
    let v = v.normalized().ok_or(Error::InvalidDirection)?;
    Ok(u.dot(v).abs().min(1.0).acos().to_degrees())
}
