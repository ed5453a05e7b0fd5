//! Ray-walking boundary detection with windowed FA / angle criteria and
//! median-clamp outlier corrections.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raygrid::{EvalGrid, EvalPoint};

/// Neighbourhood length of the correction median filters.
pub const CORRECTION_WINDOW: usize = 5;
/// Upper bound on correction sweeps before giving up on a fixed point.
pub const MAX_CORRECTION_SWEEPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayThresholds {
    pub t_fa: f64,
    /// degrees
    pub t_alpha_c: f64,
    /// degrees
    pub t_alpha_n: f64,
    /// number of predecessors in the failure window
    pub r: usize,
}

impl RayThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_fa) {
            return Err(Error::InvalidParameter(format!("t_fa must lie in [0, 1], got {}", self.t_fa)));
        }
        for (name, v) in [("t_alpha_c", self.t_alpha_c), ("t_alpha_n", self.t_alpha_n)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        if self.r == 0 {
            return Err(Error::InvalidParameter("window r must be >= 1".into()));
        }
        Ok(())
    }

    pub fn passes(&self, q: &EvalPoint) -> bool {
        q.fa >= self.t_fa && q.alpha_c <= self.t_alpha_c && q.alpha_n <= self.t_alpha_n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryField {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub d: f64,
    /// row-major `n × k`, mm from the centerline
    pub radii: Vec<f64>,
    /// rays where no boundary was found
    #[serde(default)]
    pub saturated: Vec<bool>,
    pub provenance: String,
}

impl BoundaryField {
    pub fn new(n: usize, k: usize, m: usize, d: f64, radii: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        let field = BoundaryField {
            n,
            k,
            m,
            d,
            saturated: vec![false; radii.len()],
            radii,
            provenance: provenance.into(),
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "boundary field needs n, k >= 1 and d > 0 (n={}, k={}, d={})",
                self.n, self.k, self.d
            )));
        }
        if self.radii.len() != self.n * self.k {
            return Err(Error::InvalidParameter(format!(
                "expected {} radii, found {}",
                self.n * self.k,
                self.radii.len()
            )));
        }
        if !self.saturated.is_empty() && self.saturated.len() != self.radii.len() {
            return Err(Error::InvalidParameter("saturation flags do not match radii".into()));
        }
        let max = self.max_radius();
        if let Some(bad) = self.radii.iter().find(|r| !(**r >= 0.0 && **r <= max + 1e-9)) {
            return Err(Error::InvalidParameter(format!("radius {bad} outside [0, {max}]")));
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        self.m as f64 * self.d
    }

    pub fn radius(&self, p: usize, r: usize) -> f64 {
        self.radii[p * self.k + r]
    }

    pub fn plane(&self, p: usize) -> &[f64] {
        &self.radii[p * self.k..(p + 1) * self.k]
    }

    pub fn saturated_count(&self) -> usize {
        self.saturated.iter().filter(|s| **s).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let field: BoundaryField = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        field.validate().map_err(|e| Error::format(path, e))?;
        Ok(field)
    }
}

/// Index of the first point that starts a unanimous failing window, or
/// `None` if every window contains a passing point.
pub fn boundary_index(pass: &[bool], r: usize) -> Option<usize> {
    let mut failing_run = 0usize;
    for (j, ok) in pass.iter().enumerate() {
        if *ok {
            failing_run = 0;
            continue;
        }
        failing_run += 1;
        let need = j.min(r) + 1;
        if failing_run >= need {
            return Some(j + 1 - need);
        }
    }
    None
}

pub fn detect_boundary(grid: &EvalGrid, th: &RayThresholds) -> Result<BoundaryField> {
    th.validate()?;
    let gp = grid.params;
    let walked: Vec<(f64, bool)> = (0..gp.columns())
        .into_par_iter()
        .map(|col| {
            let pass: Vec<bool> = grid.column(col / gp.k, col % gp.k).iter().map(|q| th.passes(q)).collect();
            match boundary_index(&pass, th.r) {
                Some(j) => (j as f64 * gp.d, false),
                None => (gp.max_radius(), true),
            }
        })
        .collect();
    let (radii, saturated): (Vec<f64>, Vec<bool>) = walked.into_iter().unzip();
    let field = BoundaryField {
        n: gp.n,
        k: gp.k,
        m: gp.m,
        d: gp.d,
        radii,
        saturated,
        provenance: "ray".into(),
    };
    field.validate()?;
    Ok(field)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let h = values.len() / 2;
    if values.len() % 2 == 1 {
        values[h]
    } else {
        0.5 * (values[h - 1] + values[h])
    }
}

/// One median-clamp sweep over a sequence, reading only `input`.
pub fn median_clamp_sweep(input: &[f64], wrap: bool, max_ratio: f64) -> Vec<f64> {
    let len = input.len();
    let half = CORRECTION_WINDOW / 2;
    let mut window = Vec::with_capacity(CORRECTION_WINDOW);
    (0..len)
        .map(|i| {
            window.clear();
            if wrap && len >= CORRECTION_WINDOW {
                window.extend((0..CORRECTION_WINDOW).map(|o| input[(i + len + o - half) % len]));
            } else {
                window.extend_from_slice(&input[i.saturating_sub(half)..(i + half + 1).min(len)]);
            }
            let med = median(&mut window);
            let v = input[i];
            if v > max_ratio * med || v < med / max_ratio {
                med
            } else {
                v
            }
        })
        .collect()
}

/// Repeats [`median_clamp_sweep`] until nothing changes. The flag is `false`
/// when the sweep cap was reached first.
pub fn median_clamp(input: &[f64], wrap: bool, max_ratio: f64) -> (Vec<f64>, bool) {
    let mut current = input.to_vec();
    for _ in 0..MAX_CORRECTION_SWEEPS {
        let next = median_clamp_sweep(&current, wrap, max_ratio);
        if next == current {
            return (current, true);
        }
        current = next;
    }
    (current, false)
}

fn check_ratio(max_ratio: f64) -> Result<()> {
    if !(max_ratio > 1.0 && max_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("max_ratio must be > 1, got {max_ratio}")));
    }
    Ok(())
}

fn tag(b: &BoundaryField, step: &str) -> String {
    format!("{}+{step}", b.provenance)
}

/// Clamps each plane's radii against a circular window of neighbouring rays.
pub fn in_plane_correction(b: &BoundaryField, max_ratio: f64) -> Result<BoundaryField> {
    check_ratio(max_ratio)?;
    b.validate()?;
    let planes: Vec<(Vec<f64>, bool)> = (0..b.n)
        .into_par_iter()
        .map(|p| median_clamp(b.plane(p), true, max_ratio))
        .collect();
    let unsettled = planes.iter().filter(|(_, ok)| !ok).count();
    if unsettled > 0 {
        log::warn!("in-plane correction did not settle on {unsettled} plane(s)");
    }
    Ok(BoundaryField {
        radii: planes.into_iter().flat_map(|(v, _)| v).collect(),
        provenance: tag(b, "in_plane"),
        ..b.clone()
    })
}

/// Clamps each ray index against a window of the same ray on adjacent planes.
pub fn intra_plane_correction(b: &BoundaryField, max_ratio: f64) -> Result<BoundaryField> {
    check_ratio(max_ratio)?;
    b.validate()?;
    let columns: Vec<(Vec<f64>, bool)> = (0..b.k)
        .into_par_iter()
        .map(|r| {
            let along: Vec<f64> = (0..b.n).map(|p| b.radius(p, r)).collect();
            median_clamp(&along, false, max_ratio)
        })
        .collect();
    let unsettled = columns.iter().filter(|(_, ok)| !ok).count();
    if unsettled > 0 {
        log::warn!("intra-plane correction did not settle on {unsettled} ray index(es)");
    }
    let mut radii = vec![0.0; b.radii.len()];
    for (r, (values, _)) in columns.iter().enumerate() {
        for (p, v) in values.iter().enumerate() {
            radii[p * b.k + r] = *v;
        }
    }
    Ok(BoundaryField {
        radii,
        provenance: tag(b, "intra_plane"),
        ..b.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(fa: &[f64]) -> Vec<bool> {
        fa.iter().map(|f| *f >= 0.5).collect()
    }

    #[test]
    fn all_pass_saturates() {
        assert_eq!(boundary_index(&[true; 10], 3), None);
    }

    #[test]
    fn step_profile_r1() {
        let fa: Vec<f64> = (0..20).map(|j| if j < 7 { 0.8 } else { 0.0 }).collect();
        assert_eq!(boundary_index(&profile(&fa), 1), Some(7));
    }

    #[test]
    fn noisy_pass_r2() {
        let mut fa: Vec<f64> = (0..20).map(|j| if j < 7 { 0.8 } else { 0.0 }).collect();
        fa[8] = 0.8;
        assert_eq!(boundary_index(&profile(&fa), 2), Some(9));
    }

    #[test]
    fn failing_from_start_gives_zero() {
        assert_eq!(boundary_index(&[false; 5], 4), Some(0));
        assert_eq!(boundary_index(&[true, false, true, false, false], 1), Some(3));
    }

    fn field(n: usize, k: usize, radii: Vec<f64>) -> BoundaryField {
        BoundaryField::new(n, k, 40, 0.5, radii, "test").unwrap()
    }

    #[test]
    fn constant_field_unchanged() {
        let b = field(6, 8, vec![5.0; 48]);
        assert_eq!(in_plane_correction(&b, 1.5).unwrap().radii, b.radii);
        assert_eq!(intra_plane_correction(&b, 1.5).unwrap().radii, b.radii);
    }

    #[test]
    fn in_plane_spike_replaced() {
        let mut radii = vec![1.5; 16];
        radii[5] = 15.0;
        let b = field(2, 8, radii);
        let c = in_plane_correction(&b, 1.5).unwrap();
        assert!(c.radii.iter().all(|r| *r == 1.5));
        assert_eq!(c.provenance, "test+in_plane");
    }

    #[test]
    fn sinusoid_unchanged() {
        let k = 36;
        let radii: Vec<f64> = (0..k)
            .map(|i| 5.0 * (1.0 + 0.1 * (i as f64 * std::f64::consts::TAU / k as f64).sin()))
            .collect();
        let b = field(1, k, radii);
        assert_eq!(in_plane_correction(&b, 1.5).unwrap().radii, b.radii);
    }

    #[test]
    fn intra_plane_spike_replaced() {
        let (n, k) = (9, 4);
        let mut radii = vec![2.0; n * k];
        radii[4 * k + 2] = 20.0;
        let c = intra_plane_correction(&field(n, k, radii), 1.5).unwrap();
        assert!(c.radii.iter().all(|r| *r == 2.0));
    }

    #[test]
    fn taper_unchanged() {
        let (n, k) = (30, 3);
        let radii: Vec<f64> = (0..n).flat_map(|p| vec![3.0 + 0.05 * p as f64; k]).collect();
        let b = field(n, k, radii);
        assert_eq!(intra_plane_correction(&b, 1.5).unwrap().radii, b.radii);
    }

    #[test]
    fn truncated_window_uses_even_median() {
        // ends see 3 or 4 samples
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let out = median_clamp_sweep(&[10.0, 1.0, 1.0, 1.0, 1.0, 1.0], false, 1.5);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn invalid_ratio_rejected() {
        let b = field(1, 4, vec![1.0; 4]);
        assert!(in_plane_correction(&b, 1.0).is_err());
        assert!(intra_plane_correction(&b, f64::NAN).is_err());
    }

    #[test]
    fn json_round_trip() {
        let b = field(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 20.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        b.write(&path).unwrap();
        assert_eq!(BoundaryField::read(&path).unwrap(), b);
        std::fs::write(&path, r#"{"n":1,"k":1,"m":2,"d":1.0,"radii":[5.0],"provenance":"x"}"#).unwrap();
        assert!(BoundaryField::read(&path).is_err());
    }
}
