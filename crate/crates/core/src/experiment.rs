//! Simulated scans and the three reconstruction methods behind one interface.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    compute_weights, counts_to_projections, simulate_counts, PhotonCounts, Projections, WeightMatrix,
    DEFAULT_COUNT_FLOOR,
};
use crate::admm::{CodexConfig, CodexSolver, ResidualRecord};
use crate::baselines::{ifbp, IfbpConfig};
use crate::error::{Error, Result};
use crate::prior::{Potential, PriorConfig};
use crate::projector::{Geometry, Projector};
use crate::sampling::{ExposureCode, SamplingPlan};
use crate::tomo::{mbir_with_projector, MbirConfig};

/// Image spanning `[-1, 1]^2` (pixel pitch `2 / n_side`) with a detector of the
/// same pitch covering the diagonal.
pub fn default_geometry(n_side: usize) -> Geometry {
    Geometry::square(n_side, 2.0 / n_side as f64)
}

/// Prior strength that follows the photon statistics.
///
/// The weights `D` are normalized to mean one, which divides the data term by
/// the mean detected count. The effective strength is therefore
/// `beta + beta_photon / mean_counts`; `beta` alone applies to noiseless data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularization {
    pub beta: f64,
    pub beta_photon: f64,
    pub potential: Potential,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            beta: 1e-4,
            beta_photon: 30.0,
            potential: Potential::Quadratic,
        }
    }
}

impl Regularization {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_photon >= 0.0 && self.beta_photon.is_finite()) {
            return Err(Error::param("beta_photon", "must be finite and non-negative"));
        }
        self.prior_for(None).validate()
    }

    pub fn prior_for(&self, mean_counts: Option<f64>) -> PriorConfig {
        let beta = match mean_counts {
            Some(c) if c > 0.0 => self.beta + self.beta_photon / c,
            _ => self.beta,
        };
        PriorConfig {
            beta,
            potential: self.potential,
        }
    }
}

/// A simulated acquisition: counts, log projections and weights.
#[derive(Debug, Clone)]
pub struct Scan {
    pub plan: SamplingPlan,
    pub code: ExposureCode,
    pub geometry: Geometry,
    pub seed: u64,
    pub counts: PhotonCounts,
    pub projections: Projections,
    pub weights: WeightMatrix,
}

impl Scan {
    /// Simulates `phantom` through `micro_projector`, which must span the plan's micro-angles.
    pub fn simulate(
        micro_projector: &Projector,
        phantom: ArrayView2<f64>,
        plan: &SamplingPlan,
        code: &ExposureCode,
        lambda0: Option<f64>,
        seed: u64,
    ) -> Result<Scan> {
        let counts = simulate_counts(micro_projector, phantom, plan, code, lambda0, seed)?;
        Self::from_counts(counts, plan, code, *micro_projector.geometry(), seed)
    }

    pub fn from_counts(
        counts: PhotonCounts,
        plan: &SamplingPlan,
        code: &ExposureCode,
        geometry: Geometry,
        seed: u64,
    ) -> Result<Scan> {
        let projections = counts_to_projections(&counts, code, DEFAULT_COUNT_FLOOR)?;
        let weights = compute_weights(projections.y.view(), None)?;
        Ok(Scan {
            plan: plan.clone(),
            code: code.clone(),
            geometry,
            seed,
            counts,
            projections,
            weights,
        })
    }

    /// Noiseless view data `y` (no counts), e.g. from binning dense projections.
    pub fn from_projections(y: Array2<f64>, plan: &SamplingPlan, code: &ExposureCode, geometry: Geometry) -> Result<Scan> {
        let weights = compute_weights(y.view(), None)?;
        let clamp_mask = y.mapv(|_| false);
        let counts = PhotonCounts {
            values: y.mapv(|v| code.cbar() as f64 * (-v).exp()),
            lambda0: None,
            noisy: false,
        };
        Ok(Scan {
            plan: plan.clone(),
            code: code.clone(),
            geometry,
            seed: 0,
            counts,
            projections: Projections { y, clamp_mask },
            weights,
        })
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.projections.y.view()
    }

    /// Mean detected count per view bin, `None` for noiseless data.
    pub fn mean_counts(&self) -> Option<f64> {
        self.counts.lambda0.filter(|_| self.counts.noisy).map(|_| self.counts.values.mean().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Codex,
    Mbir,
    Ifbp,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Array2<f64>,
    pub history: Vec<ResidualRecord>,
    /// Per-sweep MBIR cost, empty for other methods.
    pub costs: Vec<f64>,
    pub stalls: usize,
}

/// Weighted MBIR treating each view as one projection at its nominal angle.
pub fn reconstruct_mbir(scan: &Scan, regularization: &Regularization, config: &MbirConfig) -> Result<Reconstruction> {
    let projector = Projector::new(scan.geometry, &scan.plan.nominal_view_angles_rad())?;
    let prior = regularization.prior_for(scan.mean_counts());
    let out = mbir_with_projector(scan.y(), &projector, Some(scan.weights.values.view()), &prior, config)?;
    Ok(Reconstruction {
        image: out.x,
        history: Vec::new(),
        costs: out.costs,
        stalls: 0,
    })
}

/// CodEx over `micro_projector`; `config.prior` is replaced by the regularization policy.
pub fn reconstruct_codex(
    scan: &Scan,
    micro_projector: &Projector,
    regularization: &Regularization,
    config: &CodexConfig,
) -> Result<Reconstruction> {
    let config = CodexConfig {
        prior: regularization.prior_for(scan.mean_counts()),
        ..*config
    };
    let mut solver = CodexSolver::new(
        micro_projector,
        scan.y(),
        scan.weights.values.view(),
        &scan.plan,
        &scan.code,
        config,
    )?;
    solver.run()?;
    let state = solver.into_state();
    Ok(Reconstruction {
        image: state.x,
        history: state.history,
        costs: Vec::new(),
        stalls: state.stalls,
    })
}

pub fn reconstruct_ifbp(scan: &Scan, config: &IfbpConfig) -> Result<Reconstruction> {
    let image = ifbp(scan.y(), &scan.plan, &scan.code, &scan.geometry, config)?;
    Ok(Reconstruction {
        image,
        history: Vec::new(),
        costs: Vec::new(),
        stalls: 0,
    })
}
