//! 2D parallel-beam projector and its exact transpose.
//!
//! Each square pixel is projected onto the detector axis as a trapezoid (the
//! exact shadow of a square), and every detector bin receives the average
//! chord length of that trapezoid over its aperture. Weights are computed in
//! `f64` and rounded to `f32` once, so the cached and on-the-fly paths apply the
//! same matrix and `backproject` is its exact transpose.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sinogram::{Sinogram, SinogramRole};

/// Tables larger than this are not cached; weights are recomputed per call.
const MAX_TABLE_BYTES: usize = 1_500_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub n_side: usize,
    pub pixel_pitch: f64,
    pub num_detector_pixels: usize,
    pub detector_pitch: f64,
    /// Shift of the rotation axis along the detector, in length units.
    #[serde(default)]
    pub center_offset: f64,
}

impl Geometry {
    /// Unit-pitch square grid with a detector covering the image diagonal.
    pub fn new(n_side: usize) -> Self {
        Self::square(n_side, 1.0)
    }

    /// Detector pitch equal to the pixel pitch, `M_d = ceil(sqrt(2) * n_side)`.
    pub fn square(n_side: usize, pixel_pitch: f64) -> Self {
        Self {
            n_side,
            pixel_pitch,
            num_detector_pixels: default_detector_count(n_side, pixel_pitch, pixel_pitch),
            detector_pitch: pixel_pitch,
            center_offset: 0.0,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.n_side * self.n_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_side == 0 || self.num_detector_pixels == 0 {
            return Err(Error::InvalidGeometry(
                "image size and detector count must be positive".into(),
            ));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite())
            || !(self.detector_pitch > 0.0 && self.detector_pitch.is_finite())
        {
            return Err(Error::InvalidGeometry("pitches must be positive and finite".into()));
        }
        if !self.center_offset.is_finite() {
            return Err(Error::InvalidGeometry("center offset must be finite".into()));
        }
        Ok(())
    }

    /// Physical `(x, y)` of a pixel center; row 0 is the top of the image.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.n_side as f64 - 1.0) / 2.0;
        (
            (col as f64 - half) * self.pixel_pitch,
            (half - row as f64) * self.pixel_pitch,
        )
    }

    /// Detector coordinate of the lower edge of bin `b`.
    pub fn bin_edge(&self, b: isize) -> f64 {
        (b as f64 - self.num_detector_pixels as f64 / 2.0) * self.detector_pitch + self.center_offset
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        self.bin_edge(b as isize) + 0.5 * self.detector_pitch
    }
}

pub fn default_detector_count(n_side: usize, pixel_pitch: f64, detector_pitch: f64) -> usize {
    ((2f64.sqrt() * n_side as f64 * pixel_pitch / detector_pitch) - 1e-9).ceil() as usize
}

/// Trapezoidal shadow of one pixel at one angle.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    cos: f64,
    sin: f64,
    /// Half-width of the flat top.
    inner: f64,
    /// Half-width of the support.
    outer: f64,
    height: f64,
}

impl Footprint {
    fn new(angle: f64, pitch: f64) -> Self {
        let (sin, cos) = angle.sin_cos();
        let a = pitch * cos.abs();
        let b = pitch * sin.abs();
        Self {
            cos,
            sin,
            inner: (a - b).abs() / 2.0,
            outer: (a + b) / 2.0,
            height: pitch * pitch / a.max(b),
        }
    }

    /// Integral of the chord length from `-inf` to `t` (pixel-centered).
    fn cdf(&self, t: f64) -> f64 {
        let Footprint {
            inner,
            outer,
            height,
            ..
        } = *self;
        let ramp = outer - inner;
        if t <= -outer {
            0.0
        } else if t >= outer {
            height * (inner + outer)
        } else if t < -inner {
            height * (t + outer).powi(2) / (2.0 * ramp)
        } else if t <= inner {
            height * (ramp / 2.0 + t + inner)
        } else {
            height * ((inner + outer) - (outer - t).powi(2) / (2.0 * ramp))
        }
    }
}

struct Table {
    start: Vec<u32>,
    weights: Vec<f32>,
}

/// How the system matrix is held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// Cache if the table fits under a fixed memory budget.
    Auto,
    Cached,
    OnTheFly,
}

/// Forward projector `A` for a fixed geometry and angle list.
pub struct Projector {
    geometry: Geometry,
    angles: Vec<f64>,
    footprints: Vec<Footprint>,
    stride: usize,
    table: Option<Table>,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector")
            .field("geometry", &self.geometry)
            .field("num_angles", &self.angles.len())
            .field("cached", &self.table.is_some())
            .finish()
    }
}

impl Projector {
    pub fn new(geometry: Geometry, angles: &[f64]) -> Result<Self> {
        Self::with_storage(geometry, angles, Storage::Auto)
    }

    pub fn with_storage(geometry: Geometry, angles: &[f64], storage: Storage) -> Result<Self> {
        geometry.validate()?;
        if angles.is_empty() {
            return Err(Error::InvalidGeometry("at least one angle is required".into()));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidGeometry("angles must be finite".into()));
        }
        let width = 2f64.sqrt() * geometry.pixel_pitch / geometry.detector_pitch;
        let stride = ((width.ceil() as usize) + 1).min(geometry.num_detector_pixels);
        let footprints = angles
            .iter()
            .map(|&a| Footprint::new(a, geometry.pixel_pitch))
            .collect();
        let mut projector = Self {
            geometry,
            angles: angles.to_vec(),
            footprints,
            stride,
            table: None,
        };
        let entries = geometry.num_pixels() * angles.len();
        let bytes = entries * (4 + 4 * stride);
        let cache = match storage {
            Storage::Auto => bytes <= MAX_TABLE_BYTES,
            Storage::Cached => true,
            Storage::OnTheFly => false,
        };
        if cache {
            projector.table = Some(projector.build_table());
        }
        Ok(projector)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn is_cached(&self) -> bool {
        self.table.is_some()
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.angles.len(), self.geometry.num_detector_pixels)
    }

    fn image_shape(&self) -> (usize, usize) {
        (self.geometry.n_side, self.geometry.n_side)
    }

    /// Weights of pixel `pixel` at angle index `a`, written into `out` (length
    /// `stride`). Returns the first detector bin of the window.
    fn footprint(&self, pixel: usize, a: usize, out: &mut [f32]) -> usize {
        let g = &self.geometry;
        let fp = &self.footprints[a];
        let (x, y) = g.pixel_center(pixel / g.n_side, pixel % g.n_side);
        let center = x * fp.cos + y * fp.sin;
        let md = g.num_detector_pixels as isize;
        let origin = g.bin_edge(0);
        let first = ((center - fp.outer - origin) / g.detector_pitch).floor() as isize;
        let window = first.clamp(0, md - self.stride as isize);
        out.fill(0.0);
        let mut lower = fp.cdf(g.bin_edge(window) - center);
        for (q, w) in out.iter_mut().enumerate() {
            let upper = fp.cdf(g.bin_edge(window + q as isize + 1) - center);
            *w = ((upper - lower) / g.detector_pitch) as f32;
            lower = upper;
        }
        window as usize
    }

    fn build_table(&self) -> Table {
        let n_pix = self.geometry.num_pixels();
        let n_a = self.angles.len();
        let stride = self.stride;
        let mut start = vec![0u32; n_pix * n_a];
        let mut weights = vec![0f32; n_pix * n_a * stride];
        start
            .par_chunks_mut(n_a)
            .zip(weights.par_chunks_mut(n_a * stride))
            .enumerate()
            .for_each(|(pixel, (starts, ws))| {
                for a in 0..n_a {
                    starts[a] = self.footprint(pixel, a, &mut ws[a * stride..(a + 1) * stride]) as u32;
                }
            });
        Table { start, weights }
    }

    /// Calls `f(angle_index, first_bin, weights)` for every angle of one pixel column.
    pub fn for_each_in_column(&self, pixel: usize, mut f: impl FnMut(usize, usize, &[f32])) {
        let n_a = self.angles.len();
        let stride = self.stride;
        match &self.table {
            Some(t) => {
                let starts = &t.start[pixel * n_a..(pixel + 1) * n_a];
                let ws = &t.weights[pixel * n_a * stride..(pixel + 1) * n_a * stride];
                for a in 0..n_a {
                    f(a, starts[a] as usize, &ws[a * stride..(a + 1) * stride]);
                }
            }
            None => {
                let mut buf = vec![0f32; stride];
                for a in 0..n_a {
                    let s = self.footprint(pixel, a, &mut buf);
                    f(a, s, &buf);
                }
            }
        }
    }

    /// `A x`: one row per angle, one column per detector bin.
    pub fn project(&self, image: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(image.dim(), self.image_shape(), "image does not match projector geometry");
        let image = image.as_standard_layout();
        let pixels = image.as_slice().expect("standard layout");
        let (n_a, md) = self.sinogram_shape();
        let stride = self.stride;
        let mut sino = Array2::<f64>::zeros((n_a, md));
        let chunk = n_a.div_ceil(rayon::current_num_threads().max(1) * 4).max(1);
        sino.axis_chunks_iter_mut(Axis(0), chunk)
            .into_par_iter()
            .enumerate()
            .for_each(|(ci, mut rows)| {
                let a0 = ci * chunk;
                let a1 = a0 + rows.nrows();
                let out = rows.as_slice_mut().expect("contiguous rows");
                let mut buf = vec![0f32; stride];
                for (pixel, &v) in pixels.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for a in a0..a1 {
                        let (s, ws): (usize, &[f32]) = match &self.table {
                            Some(t) => {
                                let idx = pixel * n_a + a;
                                (t.start[idx] as usize, &t.weights[idx * stride..(idx + 1) * stride])
                            }
                            None => (self.footprint(pixel, a, &mut buf), &buf),
                        };
                        let row = &mut out[(a - a0) * md + s..(a - a0) * md + s + stride];
                        for (o, &w) in row.iter_mut().zip(ws) {
                            *o += v * w as f64;
                        }
                    }
                }
            });
        sino
    }

    /// `A^T s`, the exact transpose of [`project`](Self::project).
    pub fn backproject(&self, sino: ArrayView2<f64>) -> Array2<f64> {
        self.weighted_gather(sino, |s_val, w| s_val * w)
    }

    /// `diag(A^T W A)`: per-pixel sum of `W * a^2` over its column, `W = 1` when `None`.
    pub fn column_sq_norms(&self, weights: Option<ArrayView2<f64>>) -> Array2<f64> {
        match weights {
            Some(wts) => self.weighted_gather(wts, |wv, a| wv * a * a),
            None => {
                let ones = Array2::<f64>::ones(self.sinogram_shape());
                self.weighted_gather(ones.view(), |wv, a| wv * a * a)
            }
        }
    }

    fn weighted_gather(
        &self,
        sino: ArrayView2<f64>,
        term: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Array2<f64> {
        assert_eq!(sino.dim(), self.sinogram_shape(), "sinogram does not match projector");
        let sino = sino.as_standard_layout();
        let s = sino.as_slice().expect("standard layout");
        let md = self.geometry.num_detector_pixels;
        let n = self.geometry.n_side;
        let mut image = Array2::<f64>::zeros((n, n));
        image
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(r, mut row)| {
                for (c, out) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    self.for_each_in_column(r * n + c, |a, start, ws| {
                        let bins = &s[a * md + start..a * md + start + ws.len()];
                        for (&b, &w) in bins.iter().zip(ws) {
                            acc += term(b, w as f64);
                        }
                    });
                    *out = acc;
                }
            });
        image
    }
}

/// Projects `image` at `angles`, returning a micro-role sinogram.
pub fn project(image: ArrayView2<f64>, geometry: &Geometry, angles: &[f64]) -> Result<Sinogram> {
    if image.dim() != (geometry.n_side, geometry.n_side) {
        return Err(Error::shape(
            format!("{0}x{0} image", geometry.n_side),
            format!("{:?}", image.dim()),
        ));
    }
    let projector = Projector::new(*geometry, angles)?;
    Sinogram::new(projector.project(image), angles.to_vec(), SinogramRole::Micro)
}

/// Backprojects a sinogram onto the image grid of `geometry`.
pub fn backproject(sinogram: &Sinogram, geometry: &Geometry) -> Result<Array2<f64>> {
    if sinogram.num_detectors() != geometry.num_detector_pixels {
        return Err(Error::shape(
            format!("{} detector bins", geometry.num_detector_pixels),
            format!("{}", sinogram.num_detectors()),
        ));
    }
    let projector = Projector::new(*geometry, &sinogram.angles)?;
    Ok(projector.backproject(sinogram.values.view()))
}
