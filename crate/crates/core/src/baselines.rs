//! Comparison reconstructors: least-squares view deblurring, filtered
//! backprojection, and their composition (IFBP).

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::acquisition::{apply_c, apply_c_transpose};
use crate::error::{Error, Result};
use crate::projector::Geometry;
use crate::sampling::{ExposureCode, SamplingPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FbpFilter {
    #[default]
    Ramp,
    /// Ramp multiplied by a Hamming window reaching 0.08 at Nyquist.
    HammingRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FbpConfig {
    pub filter: FbpFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearDeblurConfig {
    pub iterations: usize,
    pub ridge: f64,
}

impl Default for LinearDeblurConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearDeblurOutcome {
    pub p: Array2<f64>,
    /// `||y - C p||` before the first iteration and after every iteration.
    pub residual_norms: Vec<f64>,
}

fn column_dots(a: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    (a * b).sum_axis(Axis(0))
}

/// Least-squares deblurring `argmin_p 1/2 ||y - C p||^2 + ridge/2 ||p||^2`,
/// solved independently per detector column by conjugate gradients on the
/// normal equations, starting from zero.
pub fn deblur_linear(
    y: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
    config: &LinearDeblurConfig,
) -> Result<LinearDeblurOutcome> {
    if !(config.ridge >= 0.0 && config.ridge.is_finite()) {
        return Err(Error::param("ridge", "must be finite and non-negative"));
    }
    let md = y.ncols();
    let normal = |v: &Array2<f64>| -> Result<Array2<f64>> {
        let cv = apply_c(plan, code, v.view())?;
        let mut out = apply_c_transpose(plan, code, cv.view())?;
        out.scaled_add(config.ridge, v);
        Ok(out)
    };
    let mut p = Array2::<f64>::zeros((plan.n_theta(), md));
    let mut r = apply_c_transpose(plan, code, y)?;
    let mut d = r.clone();
    let mut rs = column_dots(&r, &r);
    // a column stops once its normal-equation residual has dropped by 1e-15
    let floor = rs.mapv(|v| v * 1e-30);
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut residual_norms = vec![y_norm];
    for _ in 0..config.iterations {
        let q = normal(&d)?;
        let dq = column_dots(&d, &q);
        let alpha = Zip::from(&rs)
            .and(&dq)
            .and(&floor)
            .map_collect(|&a, &b, &f| if a > f && b > 0.0 { a / b } else { 0.0 });
        p += &(&d * &alpha);
        r -= &(&q * &alpha);
        let rs_new = column_dots(&r, &r);
        let beta = Zip::from(&rs_new).and(&rs).map_collect(|&a, &b| if b > 0.0 { a / b } else { 0.0 });
        d = &r + &(&d * &beta);
        rs = rs_new;
        let fit = &y - &apply_c(plan, code, p.view())?;
        residual_norms.push(fit.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(LinearDeblurOutcome { p, residual_norms })
}

/// Spatial Ram-Lak kernel sampled at bin spacing `du`, laid out circularly in
/// a buffer of length `nfft`, transformed to the frequency domain.
fn filter_response(nfft: usize, du: f64, filter: FbpFilter) -> Vec<f64> {
    let mut h = vec![Complex::new(0.0, 0.0); nfft];
    let half = nfft / 2;
    for (k, slot) in h.iter_mut().enumerate() {
        let n = if k <= half { k as i64 } else { k as i64 - nfft as i64 };
        let v = if n == 0 {
            1.0 / (4.0 * du * du)
        } else if n % 2 != 0 {
            -1.0 / (PI * n as f64 * du).powi(2)
        } else {
            0.0
        };
        *slot = Complex::new(v * du, 0.0);
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut h);
    h.iter()
        .enumerate()
        .map(|(k, c)| {
            let window = match filter {
                FbpFilter::Ramp => 1.0,
                FbpFilter::HammingRamp => {
                    let f = if k <= half { k as f64 } else { nfft as f64 - k as f64 } / nfft as f64;
                    0.54 + 0.46 * (2.0 * PI * f).cos()
                }
            };
            c.re * window
        })
        .collect()
}

/// Ramp-filters every row of `sino` (bin spacing `du`).
pub fn ramp_filter(sino: ArrayView2<f64>, du: f64, filter: FbpFilter) -> Array2<f64> {
    let md = sino.ncols();
    let nfft = (2 * md).next_power_of_two();
    let response = filter_response(nfft, du, filter);
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let mut out = Array2::<f64>::zeros(sino.dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(sino.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dst, src)| {
            let mut buf: Vec<Complex<f64>> = src
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
                .take(nfft)
                .collect();
            forward.process(&mut buf);
            for (b, &h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inverse.process(&mut buf);
            for (d, b) in dst.iter_mut().zip(&buf) {
                *d = b.re / nfft as f64;
            }
        });
    out
}

/// Filtered backprojection: ramp filter along the detector, linear
/// interpolation in the backprojection, scaled by `pi / num_angles`.
pub fn fbp(p: ArrayView2<f64>, angles: &[f64], geometry: &Geometry, config: &FbpConfig) -> Result<Array2<f64>> {
    geometry.validate()?;
    if p.nrows() != angles.len() || p.ncols() != geometry.num_detector_pixels {
        return Err(Error::shape(
            format!("{} x {} sinogram", angles.len(), geometry.num_detector_pixels),
            format!("{:?}", p.dim()),
        ));
    }
    if angles.is_empty() {
        return Err(Error::param("angles", "at least one angle is required"));
    }
    let du = geometry.detector_pitch;
    let filtered = ramp_filter(p, du, config.filter);
    let n = geometry.n_side;
    let md = geometry.num_detector_pixels;
    let origin = geometry.bin_center(0);
    let trig: Vec<(f64, f64)> = angles.iter().map(|a| a.sin_cos()).collect();
    let scale = PI / angles.len() as f64;
    let mut image = Array2::<f64>::zeros((n, n));
    image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut row)| {
            for (c, out) in row.iter_mut().enumerate() {
                let (x, y) = geometry.pixel_center(r, c);
                let mut acc = 0.0;
                for (a, &(sin, cos)) in trig.iter().enumerate() {
                    let t = (x * cos + y * sin - origin) / du;
                    if t < 0.0 || t > (md - 1) as f64 {
                        continue;
                    }
                    let b = (t.floor() as usize).min(md - 2);
                    let f = t - b as f64;
                    acc += filtered[[a, b]] * (1.0 - f) + filtered[[a, b + 1]] * f;
                }
                *out = acc * scale;
            }
        });
    Ok(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IfbpConfig {
    pub deblur: LinearDeblurConfig,
    pub fbp: FbpConfig,
}

/// Least-squares deblurring onto the micro-angles followed by FBP.
pub fn ifbp(
    y: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
    geometry: &Geometry,
    config: &IfbpConfig,
) -> Result<Array2<f64>> {
    let deblurred = deblur_linear(y, plan, code, &config.deblur)?;
    fbp(deblurred.p.view(), &plan.micro_angles_rad(), geometry, &config.fbp)
}
