//! The CodEx reconstruction loop.
//!
//! Each outer iteration runs, in this order,
//!
//! ```text
//! p <- F~_d(A x - u; p)
//! x <- F~_t(p + u; x)
//! u <- u + p - A x
//! ```
//!
//! and records the primal residual `RMSE(A x_t, p_t)` and dual residual
//! `RMSE(A x_t, A x_{t-1})`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::deblur::{DeblurConfig, DeblurProblem};
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::prior::PriorConfig;
use crate::projector::{Geometry, Projector};
use crate::sampling::{ExposureCode, SamplingPlan};
use crate::tomo::{mbir_with_projector, MbirConfig, TomoConfig, TomoProblem};

/// The run is aborted when the primal residual exceeds this multiple of its
/// first nonzero value.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPolicy {
    /// Weighted MBIR on the view data at the nominal view angles.
    Mbir { iterations: usize },
    Zero,
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Mbir { iterations: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodexConfig {
    pub outer_iterations: usize,
    /// Shared by both sub-operators; their own `sigma` fields are ignored.
    pub sigma: f64,
    pub deblur: DeblurConfig,
    pub tomo: TomoConfig,
    pub prior: PriorConfig,
    pub init: InitPolicy,
    /// Stop early once both residuals fall below this value.
    pub tolerance: Option<f64>,
}

impl Default for CodexConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 100,
            sigma: 1.0,
            deblur: DeblurConfig::default(),
            tomo: TomoConfig::default(),
            prior: PriorConfig::default(),
            init: InitPolicy::default(),
            tolerance: None,
        }
    }
}

impl CodexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::param("outer_iterations", "must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive and finite"));
        }
        self.deblur_config().validate()?;
        self.tomo_config().validate()?;
        self.prior.validate()?;
        if let InitPolicy::Mbir { iterations: 0 } = self.init {
            return Err(Error::param("init", "MBIR warm start needs at least 1 iteration"));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0) {
                return Err(Error::param("tolerance", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn deblur_config(&self) -> DeblurConfig {
        DeblurConfig {
            sigma: self.sigma,
            ..self.deblur
        }
    }

    pub fn tomo_config(&self) -> TomoConfig {
        TomoConfig {
            sigma: self.sigma,
            ..self.tomo
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
}

/// Iterate of the loop. `ax` caches `A x`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub p: Array2<f64>,
    pub x: Array2<f64>,
    pub u: Array2<f64>,
    pub ax: Array2<f64>,
    pub sigma: f64,
    pub iteration: usize,
    pub history: Vec<ResidualRecord>,
    /// Deblurring line searches that exhausted their halvings.
    pub stalls: usize,
    pub clamp_events: usize,
}

/// `(RMSE(A x, p), RMSE(A x, A x_prev))`; the dual entry is `None` without a previous projection.
pub fn residuals(state: &AdmmState, ax_prev: Option<ArrayView2<f64>>) -> Result<(f64, Option<f64>)> {
    let primal = rmse(state.ax.view(), state.p.view())?;
    let dual = ax_prev.map(|prev| rmse(state.ax.view(), prev)).transpose()?;
    Ok((primal, dual))
}

/// Points in the update sequence reported to an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Deblur,
    Tomo,
    Dual,
}

/// Step-wise CodEx solver over a prebuilt micro-angle projector.
pub struct CodexSolver<'a> {
    projector: &'a Projector,
    deblur: DeblurProblem<'a>,
    tomo: TomoProblem<'a>,
    config: CodexConfig,
    state: AdmmState,
    first_primal: Option<f64>,
}

impl<'a> CodexSolver<'a> {
    /// Initializes according to `config.init`.
    pub fn new(
        projector: &'a Projector,
        y: ArrayView2<'a, f64>,
        weights: ArrayView2<'a, f64>,
        plan: &'a SamplingPlan,
        code: &'a ExposureCode,
        config: CodexConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = projector.geometry().n_side;
        let x = match config.init {
            InitPolicy::Zero => Array2::zeros((n, n)),
            InitPolicy::Mbir { iterations } => {
                let nominal = Projector::new(*projector.geometry(), &plan.nominal_view_angles_rad())?;
                let mbir = MbirConfig {
                    iterations,
                    solver: config.tomo.solver,
                    positivity: config.tomo.positivity,
                };
                mbir_with_projector(y, &nominal, Some(weights), &config.prior, &mbir)?.x
            }
        };
        let p = projector.project(x.view());
        Self::with_state(projector, y, weights, plan, code, config, x, p.clone(), Array2::zeros(p.dim()))
    }

    /// Starts from a given `(x, p, u)`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_state(
        projector: &'a Projector,
        y: ArrayView2<'a, f64>,
        weights: ArrayView2<'a, f64>,
        plan: &'a SamplingPlan,
        code: &'a ExposureCode,
        config: CodexConfig,
        x: Array2<f64>,
        p: Array2<f64>,
        u: Array2<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if projector.num_angles() != plan.n_theta() {
            return Err(Error::shape(
                format!("projector over {} micro-angles", plan.n_theta()),
                projector.num_angles(),
            ));
        }
        let shape = projector.sinogram_shape();
        if p.dim() != shape || u.dim() != shape {
            return Err(Error::shape(format!("{shape:?} p and u"), format!("{:?}, {:?}", p.dim(), u.dim())));
        }
        let n = projector.geometry().n_side;
        if x.dim() != (n, n) {
            return Err(Error::shape(format!("{n}x{n} image"), format!("{:?}", x.dim())));
        }
        if y.ncols() != projector.geometry().num_detector_pixels {
            return Err(Error::shape(
                format!("{} detector bins", projector.geometry().num_detector_pixels),
                y.ncols(),
            ));
        }
        let deblur = DeblurProblem::new(plan, code, y, weights, config.sigma)?;
        let tomo = TomoProblem::new(projector, None, config.sigma, config.prior)?;
        let ax = projector.project(x.view());
        Ok(Self {
            projector,
            deblur,
            tomo,
            config,
            state: AdmmState {
                p,
                x,
                u,
                ax,
                sigma: config.sigma,
                iteration: 0,
                history: Vec::new(),
                stalls: 0,
                clamp_events: 0,
            },
            first_primal: None,
        })
    }

    pub fn state(&self) -> &AdmmState {
        &self.state
    }

    pub fn into_state(self) -> AdmmState {
        self.state
    }

    pub fn projector(&self) -> &Projector {
        self.projector
    }

    /// One outer iteration; `observer` is called before each of the three updates.
    pub fn step_observed(&mut self, mut observer: impl FnMut(Stage, &AdmmState)) -> Result<ResidualRecord> {
        let s = &mut self.state;

        observer(Stage::Deblur, s);
        let center = &s.ax - &s.u;
        let deblurred = self.deblur.partial(s.p.view(), center.view(), &self.config.deblur_config())?;
        s.p = deblurred.p;
        s.stalls += deblurred.stalls;
        s.clamp_events += deblurred.clamp_events;

        observer(Stage::Tomo, s);
        let target = &s.p + &s.u;
        let tomo = self.config.tomo_config();
        let out = self.tomo.sweeps(s.x.view(), target.view(), tomo.n_t, tomo.solver, tomo.positivity)?;
        s.x = out.x;
        let ax_prev = std::mem::replace(&mut s.ax, out.projection);

        observer(Stage::Dual, s);
        s.u += &s.p;
        s.u -= &s.ax;

        s.iteration += 1;
        let (primal, dual) = residuals(s, Some(ax_prev.view()))?;
        let record = ResidualRecord {
            iteration: s.iteration,
            primal,
            dual: dual.expect("previous projection supplied"),
        };
        s.history.push(record);
        if !primal.is_finite() || !record.dual.is_finite() {
            return Err(Error::Numerical(format!("non-finite residual at iteration {}", s.iteration)));
        }
        match self.first_primal {
            None if primal > 0.0 => self.first_primal = Some(primal),
            Some(first) if primal > DIVERGENCE_FACTOR * first => {
                return Err(Error::Numerical(format!(
                    "ADMM diverged at iteration {}: primal residual {primal:.3e} exceeds {DIVERGENCE_FACTOR:.0e} x initial {first:.3e}",
                    s.iteration
                )));
            }
            _ => {}
        }
        Ok(record)
    }

    pub fn step(&mut self) -> Result<ResidualRecord> {
        self.step_observed(|_, _| {})
    }

    /// Runs the remaining outer iterations, or stops early at the tolerance.
    pub fn run(&mut self) -> Result<()> {
        self.run_observed(|_, _| {})
    }

    pub fn run_observed(&mut self, mut observer: impl FnMut(Stage, &AdmmState)) -> Result<()> {
        while self.state.iteration < self.config.outer_iterations {
            let record = self.step_observed(&mut observer)?;
            if let Some(tol) = self.config.tolerance {
                if record.primal < tol && record.dual < tol {
                    break;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CodexOutcome {
    pub x: Array2<f64>,
    pub history: Vec<ResidualRecord>,
    pub stalls: usize,
    pub clamp_events: usize,
}

/// Full CodEx reconstruction from view data `y` with photon weights `weights`.
pub fn codex_reconstruct(
    y: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    plan: &SamplingPlan,
    code: &ExposureCode,
    geometry: &Geometry,
    config: &CodexConfig,
) -> Result<CodexOutcome> {
    let projector = Projector::new(*geometry, &plan.micro_angles_rad())?;
    let mut solver = CodexSolver::new(&projector, y.view(), weights.view(), plan, code, *config)?;
    solver.run()?;
    let state = solver.into_state();
    Ok(CodexOutcome {
        x: state.x,
        history: state.history,
        stalls: state.stalls,
        clamp_events: state.clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::coded_projections;
    use crate::phantom::{make_phantom, PhantomKind};

    fn small_problem(code: ExposureCode, n_theta: usize, m_theta: usize) -> (SamplingPlan, ExposureCode, Geometry, Array2<f64>) {
        let plan = SamplingPlan::coprime_with_micro_count(code.len(), n_theta, m_theta).unwrap();
        let geometry = Geometry::square(16, 1.0);
        let phantom = make_phantom(PhantomKind::Blobs, 16, 3).unwrap();
        (plan, code, geometry, phantom)
    }

    #[test]
    fn residuals_by_hand() {
        let ax = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let p = ndarray::array![[1.5, 2.0], [3.0, 3.0]];
        let state = AdmmState {
            p: p.clone(),
            x: Array2::zeros((1, 1)),
            u: Array2::zeros((2, 2)),
            ax: ax.clone(),
            sigma: 1.0,
            iteration: 1,
            history: vec![],
            stalls: 0,
            clamp_events: 0,
        };
        let (primal, dual) = residuals(&state, Some(p.view())).unwrap();
        let want = ((0.25 + 1.0) / 4.0f64).sqrt();
        assert!((primal - want).abs() < 1e-12);
        assert!((dual.unwrap() - want).abs() < 1e-12);
        let (_, none) = residuals(&state, None).unwrap();
        assert!(none.is_none());
        let (zero, _) = residuals(&AdmmState { p: ax.clone(), ..state.clone() }, None).unwrap();
        assert_eq!(zero, 0.0);
        let (_, zero_dual) = residuals(&state, Some(ax.view())).unwrap();
        assert_eq!(zero_dual, Some(0.0));
    }

    #[test]
    fn update_order_is_deblur_tomo_dual() {
        let (plan, code, geometry, phantom) = small_problem(ExposureCode::boxcar(3).unwrap(), 20, 10);
        let projector = Projector::new(geometry, &plan.micro_angles_rad()).unwrap();
        let p = projector.project(phantom.view());
        let y = coded_projections(&plan, &code, p.view()).unwrap();
        let w = Array2::ones(y.dim());
        let config = CodexConfig { outer_iterations: 3, init: InitPolicy::Zero, ..Default::default() };
        let mut solver = CodexSolver::new(&projector, y.view(), w.view(), &plan, &code, config).unwrap();
        let mut stages = Vec::new();
        solver.run_observed(|stage, _| stages.push(stage)).unwrap();
        let expected: Vec<Stage> = (0..3).flat_map(|_| [Stage::Deblur, Stage::Tomo, Stage::Dual]).collect();
        assert_eq!(stages, expected);
        assert_eq!(solver.state().history.len(), 3);
    }

    #[test]
    fn truth_is_a_fixed_point_for_any_sigma() {
        let (plan, code, geometry, phantom) = small_problem(ExposureCode::raskar(52).unwrap(), 53, 53);
        let projector = Projector::new(geometry, &plan.micro_angles_rad()).unwrap();
        let p = projector.project(phantom.view());
        let y = coded_projections(&plan, &code, p.view()).unwrap();
        let w = Array2::ones(y.dim());
        for sigma in [1.0, 0.25] {
            let config = CodexConfig {
                outer_iterations: 4,
                sigma,
                prior: PriorConfig::quadratic(0.0),
                init: InitPolicy::Zero,
                ..Default::default()
            };
            let mut solver = CodexSolver::with_state(
                &projector,
                y.view(),
                w.view(),
                &plan,
                &code,
                config,
                phantom.clone(),
                p.clone(),
                Array2::zeros(p.dim()),
            )
            .unwrap();
            solver.run().unwrap();
            let s = solver.state();
            assert!(s.history.iter().all(|r| r.primal <= 1e-8 && r.dual <= 1e-8), "{:?}", s.history);
            let drift = (&s.x - &phantom).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(drift < 1e-8, "sigma={sigma}: {drift}");
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (plan, code, geometry, _) = small_problem(ExposureCode::boxcar(3).unwrap(), 20, 10);
        let wrong = Projector::new(geometry, &[0.0, 1.0]).unwrap();
        let y = Array2::zeros((10, geometry.num_detector_pixels));
        let w = Array2::ones(y.dim());
        assert!(CodexSolver::new(&wrong, y.view(), w.view(), &plan, &code, CodexConfig::default()).is_err());
        let bad = CodexConfig { outer_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
