//! Image-quality metrics: NRMSE/RMSE and edge-based MTF measurement.

use std::f64::consts::PI;

use ndarray::{ArrayView2, Zip};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{ring_edge_radii, star_edge_angles, PhantomKind, OUTER_RADIUS, RING_BANDS};

/// Shortest accepted edge profile, in samples.
pub const MIN_PROFILE_SAMPLES: usize = 16;

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", b.dim()), format!("{:?}", a.dim())));
    }
    Ok(())
}

/// `||x - x0|| / ||x0||`.
pub fn nrmse(x: ArrayView2<f64>, x0: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(&x, &x0)?;
    let norm0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return Err(Error::param("x0", "reference image is identically zero"));
    }
    let diff = Zip::from(x).and(x0).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(diff.sqrt() / norm0)
}

/// Root-mean-square difference over all entries.
pub fn rmse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(&a, &b)?;
    if a.is_empty() {
        return Err(Error::param("a", "empty array"));
    }
    let sum = Zip::from(a).and(b).fold(0.0, |acc, &u, &v| acc + (u - v) * (u - v));
    Ok((sum / a.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtfDirection {
    /// Across radial edges, along circles around the center.
    Tangential,
    /// Across circular edges, along rays from the center.
    Radial,
}

impl MtfDirection {
    pub fn name(&self) -> &'static str {
        match self {
            MtfDirection::Tangential => "tangential",
            MtfDirection::Radial => "radial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    /// Cycles per pixel, from 0 up to at most 0.5.
    pub frequencies: Vec<f64>,
    /// Normalized so that the first entry is 1.
    pub magnitudes: Vec<f64>,
    pub direction: MtfDirection,
    /// Distance of the measured edge point from the image center, in pixels.
    pub radius: f64,
}

impl MtfCurve {
    /// Linear interpolation of the magnitude at frequency `f`.
    pub fn at(&self, f: f64) -> f64 {
        let fs = &self.frequencies;
        if f <= fs[0] {
            return self.magnitudes[0];
        }
        for k in 1..fs.len() {
            if f <= fs[k] {
                let t = (f - fs[k - 1]) / (fs[k] - fs[k - 1]);
                return self.magnitudes[k - 1] * (1.0 - t) + self.magnitudes[k] * t;
            }
        }
        *self.magnitudes.last().expect("non-empty curve")
    }

    /// Pointwise mean of curves sampled on identical frequency grids.
    pub fn average(curves: &[MtfCurve]) -> Result<MtfCurve> {
        let first = curves.first().ok_or_else(|| Error::param("curves", "nothing to average"))?;
        if curves.iter().any(|c| c.frequencies != first.frequencies) {
            return Err(Error::param("curves", "frequency grids differ"));
        }
        let mut magnitudes = vec![0.0; first.magnitudes.len()];
        for c in curves {
            for (m, v) in magnitudes.iter_mut().zip(&c.magnitudes) {
                *m += v / curves.len() as f64;
            }
        }
        Ok(MtfCurve {
            frequencies: first.frequencies.clone(),
            magnitudes,
            direction: first.direction,
            radius: first.radius,
        })
    }
}

/// A line profile across an edge, in continuous pixel coordinates: `u` runs
/// along columns and `v` along rows, with pixel `(r, c)` centered at
/// `(c + 0.5, r + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeProfile {
    pub center: (f64, f64),
    /// Unit vector across the edge.
    pub normal: (f64, f64),
    pub half_length: f64,
    /// Sample spacing in pixels.
    pub step: f64,
}

impl EdgeProfile {
    pub fn num_samples(&self) -> usize {
        (2.0 * self.half_length / self.step).floor() as usize + 1
    }
}

/// Bilinear interpolation with edge clamping.
pub fn sample_bilinear(image: ArrayView2<f64>, u: f64, v: f64) -> f64 {
    let (rows, cols) = image.dim();
    let x = (u - 0.5).clamp(0.0, (cols - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (rows - 1) as f64);
    let c0 = (x.floor() as usize).min(cols.saturating_sub(2));
    let r0 = (y.floor() as usize).min(rows.saturating_sub(2));
    let c1 = (c0 + 1).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let fx = x - c0 as f64;
    let fy = y - r0 as f64;
    let top = image[[r0, c0]] * (1.0 - fx) + image[[r0, c1]] * fx;
    let bottom = image[[r1, c0]] * (1.0 - fx) + image[[r1, c1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Edge spread function along `profile`.
pub fn edge_spread(image: ArrayView2<f64>, profile: &EdgeProfile) -> Vec<f64> {
    let n = profile.num_samples();
    (0..n)
        .map(|k| {
            let s = -profile.half_length + k as f64 * profile.step;
            sample_bilinear(
                image,
                profile.center.0 + s * profile.normal.0,
                profile.center.1 + s * profile.normal.1,
            )
        })
        .collect()
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
        .collect()
}

/// MTF from an edge spread function sampled at spacing `step` pixels.
pub fn mtf_from_esf(esf: &[f64], step: f64, direction: MtfDirection, radius: f64) -> Result<MtfCurve> {
    if esf.len() < MIN_PROFILE_SAMPLES {
        return Err(Error::param(
            "profile",
            format!("{} samples, need at least {MIN_PROFILE_SAMPLES}", esf.len()),
        ));
    }
    let lsf: Vec<f64> = (1..esf.len() - 1)
        .map(|k| (esf[k + 1] - esf[k - 1]) / (2.0 * step))
        .collect();
    let window = hamming(lsf.len());
    let nfft = lsf.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = lsf
        .iter()
        .zip(&window)
        .map(|(v, w)| Complex::new(v * w, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let dc = buf[0].norm();
    if !(dc > 1e-12 * lsf.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE)) || !dc.is_finite() {
        return Err(Error::Numerical("edge profile has no net contrast".into()));
    }
    let df = 1.0 / (nfft as f64 * step);
    let bins = ((0.5 / df).floor() as usize).min(nfft / 2);
    Ok(MtfCurve {
        frequencies: (0..=bins).map(|k| k as f64 * df).collect(),
        magnitudes: (0..=bins).map(|k| buf[k].norm() / dc).collect(),
        direction,
        radius,
    })
}

/// ESF along `profile` -> central-difference LSF -> Hamming window -> |FFT| / DC.
pub fn mtf_from_edge(image: ArrayView2<f64>, profile: &EdgeProfile, direction: MtfDirection) -> Result<MtfCurve> {
    let (rows, cols) = image.dim();
    let radius = (profile.center.0 - cols as f64 / 2.0).hypot(profile.center.1 - rows as f64 / 2.0);
    mtf_from_esf(&edge_spread(image, profile), profile.step, direction, radius)
}

/// Measurement radii as fractions of the phantom's outer radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtfRadii {
    pub near: f64,
    pub far: f64,
}

impl Default for MtfRadii {
    fn default() -> Self {
        Self { near: 0.25, far: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfReport {
    pub near: MtfCurve,
    pub far: MtfCurve,
}

impl MtfReport {
    pub fn curves(&self) -> [&MtfCurve; 2] {
        [&self.near, &self.far]
    }
}

/// Number of azimuths averaged for radial curves.
const RADIAL_AZIMUTHS: usize = 16;

/// Profiles across every radial edge of a Siemens star at `radius` pixels.
pub fn star_profiles(n_side: usize, spokes: usize, radius: f64) -> Vec<EdgeProfile> {
    let half = n_side as f64 / 2.0;
    let half_length = 0.45 * radius * PI / spokes as f64;
    let step = (half_length / 10.0).min(0.25);
    star_edge_angles(spokes)
        .into_iter()
        .map(|phi| EdgeProfile {
            center: (half + radius * phi.cos(), half - radius * phi.sin()),
            normal: (-phi.sin(), -phi.cos()),
            half_length,
            step,
        })
        .collect()
}

/// Profiles along rays across the ring edge at `radius` pixels, at `azimuths`.
pub fn ring_profiles(n_side: usize, radius: f64, azimuths: &[f64]) -> Vec<EdgeProfile> {
    let half = n_side as f64 / 2.0;
    let band = OUTER_RADIUS * half / RING_BANDS as f64;
    let half_length = 0.45 * band;
    let step = (half_length / 10.0).min(0.25);
    azimuths
        .iter()
        .map(|&phi| EdgeProfile {
            center: (half + radius * phi.cos(), half - radius * phi.sin()),
            normal: (phi.cos(), -phi.sin()),
            half_length,
            step,
        })
        .collect()
}

/// Ring edge radius closest to `target` pixels, excluding the outer boundary.
fn nearest_ring_edge(n_side: usize, target: f64) -> f64 {
    let radii = ring_edge_radii(n_side);
    radii[..radii.len() - 1]
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .expect("at least two ring edges")
}

/// Tangential curves for a Siemens star or radial curves for concentric
/// circles, each averaged over all measured edges at the near and far radius.
pub fn mtf_report(reconstruction: ArrayView2<f64>, kind: PhantomKind, radii: MtfRadii) -> Result<MtfReport> {
    let (rows, cols) = reconstruction.dim();
    if rows != cols {
        return Err(Error::shape("square image", format!("{:?}", reconstruction.dim())));
    }
    if !(0.0 < radii.near && radii.near < radii.far && radii.far < 1.0) {
        return Err(Error::param("radii", "need 0 < near < far < 1"));
    }
    let outer = OUTER_RADIUS * rows as f64 / 2.0;
    let curve_at = |fraction: f64| -> Result<MtfCurve> {
        let target = fraction * outer;
        let (profiles, direction) = match kind {
            PhantomKind::SiemensStar { spokes } => (star_profiles(rows, spokes, target), MtfDirection::Tangential),
            PhantomKind::ConcentricCircles => {
                let azimuths: Vec<f64> = (0..RADIAL_AZIMUTHS)
                    .map(|k| (k as f64 + 0.5) * 2.0 * PI / RADIAL_AZIMUTHS as f64)
                    .collect();
                let radius = nearest_ring_edge(rows, target);
                (ring_profiles(rows, radius, &azimuths), MtfDirection::Radial)
            }
            other => {
                return Err(Error::param(
                    "phantom",
                    format!("MTF needs a siemens_star or concentric_circles phantom, got {}", other.name()),
                ))
            }
        };
        let curves = profiles
            .iter()
            .map(|p| mtf_from_edge(reconstruction, p, direction))
            .collect::<Result<Vec<_>>>()?;
        MtfCurve::average(&curves)
    };
    Ok(MtfReport {
        near: curve_at(radii.near)?,
        far: curve_at(radii.far)?,
    })
}
