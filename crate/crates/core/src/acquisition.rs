//! The coded measurement model: the coded-sum operator `C`, photon counting,
//! log normalization, statistical weights and binning of dense data.
//!
//! `C` maps `N_theta` micro-projection rows to `M_theta` view rows,
//! `out[i] = sum_{k: c_k = 1} in[(i*K + k) mod N_theta] / cbar`, acting on each
//! detector column independently.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projector::Projector;
use crate::sampling::{ExposureCode, SamplingPlan};

/// Counts below this are clamped before the log.
pub const DEFAULT_COUNT_FLOOR: f64 = 1.0;

fn check_pair(plan: &SamplingPlan, code: &ExposureCode) -> Result<()> {
    plan.check_code(code)
}

fn check_rows(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(
            format!("{expected} {what} rows"),
            format!("{actual} rows"),
        ));
    }
    Ok(())
}

/// `C p`: coded, normalized sum of micro-projection rows into view rows.
pub fn apply_c(
    plan: &SamplingPlan,
    code: &ExposureCode,
    micro: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_pair(plan, code)?;
    check_rows("micro-projection", plan.n_theta(), micro.nrows())?;
    let scale = 1.0 / code.cbar() as f64;
    let chops: Vec<usize> = code.open_chops().collect();
    let mut out = Array2::<f64>::zeros((plan.m_theta(), micro.ncols()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for &k in &chops {
                row.scaled_add(scale, &micro.row(plan.micro_index(i, k)));
            }
        });
    Ok(out)
}

/// `C^T v`, the exact transpose of [`apply_c`].
pub fn apply_c_transpose(
    plan: &SamplingPlan,
    code: &ExposureCode,
    views: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_pair(plan, code)?;
    check_rows("view", plan.m_theta(), views.nrows())?;
    let scale = 1.0 / code.cbar() as f64;
    // sources[j] lists the views that read micro row j, once per open chop
    let mut sources: Vec<Vec<usize>> = vec![Vec::new(); plan.n_theta()];
    for i in 0..plan.m_theta() {
        for k in code.open_chops() {
            sources[plan.micro_index(i, k)].push(i);
        }
    }
    let mut out = Array2::<f64>::zeros((plan.n_theta(), views.ncols()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(sources.par_iter())
        .for_each(|(mut row, src)| {
            for &i in src {
                row.scaled_add(scale, &views.row(i));
            }
        });
    Ok(out)
}

/// Detected photon counts per view bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonCounts {
    pub values: Array2<f64>,
    /// Source flux per chop; `None` means infinite flux, in which case `values`
    /// hold the expected counts per unit flux.
    pub lambda0: Option<f64>,
    /// Whether `values` were drawn from the Poisson model.
    pub noisy: bool,
}

/// Expected counts `cbar * lambda0 * C exp(-A x)` with `lambda0 = 1` when `None`.
pub fn expected_counts(
    projector: &Projector,
    image: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
    lambda0: Option<f64>,
) -> Result<Array2<f64>> {
    check_rows("projector angle", plan.n_theta(), projector.num_angles())?;
    let transmission = projector.project(image).mapv(|p| (-p).exp());
    let mut mean = apply_c(plan, code, transmission.view())?;
    let flux = code.cbar() as f64 * lambda0.unwrap_or(1.0);
    mean *= flux;
    Ok(mean)
}

/// Simulates detector counts. Finite `lambda0` draws Poisson noise from a
/// stream keyed by `(seed, view, detector)`; `None` returns the noiseless mean.
pub fn simulate_counts(
    projector: &Projector,
    image: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
    lambda0: Option<f64>,
    seed: u64,
) -> Result<PhotonCounts> {
    if let Some(l) = lambda0 {
        if !(l > 0.0) {
            return Err(Error::param("lambda0", "source flux must be positive"));
        }
        if l.is_infinite() {
            return simulate_counts(projector, image, plan, code, None, seed);
        }
    }
    let mean = expected_counts(projector, image, plan, code, lambda0)?;
    let Some(l0) = lambda0 else {
        return Ok(PhotonCounts {
            values: mean,
            lambda0: None,
            noisy: false,
        });
    };
    let md = mean.ncols();
    let mut values = mean;
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (d, v) in row.iter_mut().enumerate() {
                *v = poisson_draw(seed, i, d, md, *v);
            }
        });
    Ok(PhotonCounts {
        values,
        lambda0: Some(l0),
        noisy: true,
    })
}

/// One Poisson draw with mean `mean` from the stream of bin `(view, detector)`.
pub fn poisson_draw(seed: u64, view: usize, detector: usize, num_detectors: usize, mean: f64) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((view * num_detectors + detector) as u64);
    Poisson::new(mean)
        .map(|dist| dist.sample(&mut rng))
        .unwrap_or(mean)
}

/// Log-normalized projections and the bins that needed clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub y: Array2<f64>,
    pub clamp_mask: Array2<bool>,
}

impl Projections {
    pub fn clamped(&self) -> usize {
        self.clamp_mask.iter().filter(|&&m| m).count()
    }
}

/// `y = -log(max(lambda, floor) / (cbar * lambda0))`.
pub fn counts_to_projections(
    counts: &PhotonCounts,
    code: &ExposureCode,
    count_floor: f64,
) -> Result<Projections> {
    if counts.values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::param("counts", "photon counts must be nonnegative"));
    }
    let (blank, floor) = match counts.lambda0 {
        Some(l0) if l0.is_finite() && l0 > 0.0 => (code.cbar() as f64 * l0, count_floor),
        _ if counts.noisy => {
            return Err(Error::param(
                "lambda0",
                "noisy counts need a finite source flux to normalize",
            ))
        }
        // noiseless counts are per unit flux; only guard against underflow
        _ => (code.cbar() as f64, f64::MIN_POSITIVE),
    };
    let clamp_mask = counts.values.mapv(|v| v < floor);
    let y = counts.values.mapv(|v| -(v.max(floor) / blank).ln());
    Ok(Projections { y, clamp_mask })
}

/// Diagonal statistical weights `D = w * exp(-y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: Array2<f64>,
    pub w: f64,
}

/// Builds `D`. With `w = None` the scale is `1 / mean(exp(-y))` so weights average one.
pub fn compute_weights(y: ArrayView2<f64>, w: Option<f64>) -> Result<WeightMatrix> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("projections must be finite".into()));
    }
    let transmission = y.mapv(|v| (-v).exp());
    let w = match w {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::param("w", format!("must be positive, got {w}"))),
        None => {
            let mean = transmission.mean().unwrap_or(1.0);
            if mean > 0.0 {
                1.0 / mean
            } else {
                1.0
            }
        }
    };
    Ok(WeightMatrix {
        values: transmission * w,
        w,
    })
}

/// Codes dense projections taken at all `N_theta` micro-angles into view data:
/// `y_i = -log(sum_k c_k / cbar * exp(-dense[(iK + k) mod N_theta]))`.
pub fn bin_dense_projections(
    dense: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
) -> Result<Array2<f64>> {
    check_rows("dense projection", plan.n_theta(), dense.nrows())?;
    let transmission = dense.mapv(|v| (-v).exp());
    let mut coded = apply_c(plan, code, transmission.view())?;
    coded.mapv_inplace(|t| -t.ln());
    Ok(coded)
}

/// `-log(C exp(-p))`, the noiseless view data for micro-projections `p`.
pub fn coded_projections(
    plan: &SamplingPlan,
    code: &ExposureCode,
    micro: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    bin_dense_projections(micro, plan, code)
}

/// `sum w * v^2`, or `sum v^2` without weights.
pub(crate) fn weighted_sum_sq(values: ArrayView2<f64>, weights: Option<ArrayView2<f64>>) -> f64 {
    match weights {
        Some(w) => Zip::from(values).and(w).fold(0.0, |acc, &v, &w| acc + w * v * v),
        None => values.iter().map(|v| v * v).sum(),
    }
}
