//! Regularized tomographic reconstruction: the `F_t` step of the ADMM loop and
//! the plain MBIR baseline.
//!
//! Both minimize `1/(2 sigma^2) ||p - A x||_W^2 + h(x)`; `F_t` uses `W = I`,
//! MBIR uses the photon weights `D` and `sigma = 1`.
//!
//! Two sweep kinds are available. [`TomoSolver::Icd`] visits pixels in raster
//! order and minimizes a quadratic majorizer of the cost in each one.
//! [`TomoSolver::Gradient`] runs preconditioned nonlinear conjugate gradients
//! with the step length minimizing the same majorizer along the search
//! direction. Both are monotone and cost one `A`-sized pass per sweep.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{neighbors, PriorConfig};
use crate::projector::{Geometry, Projector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TomoSolver {
    #[default]
    Icd,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomoConfig {
    /// Sweeps per call.
    pub n_t: usize,
    /// Coupling scale of the data term; overridden by the ADMM driver.
    pub sigma: f64,
    pub solver: TomoSolver,
    /// Clamp pixels at zero (ICD only).
    pub positivity: bool,
}

impl Default for TomoConfig {
    fn default() -> Self {
        Self {
            n_t: 5,
            sigma: 1.0,
            solver: TomoSolver::Icd,
            positivity: false,
        }
    }
}

impl TomoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 {
            return Err(Error::param("n_t", "must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive and finite"));
        }
        if self.positivity && self.solver != TomoSolver::Icd {
            return Err(Error::param("positivity", "only supported by the icd solver"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TomoOutcome {
    pub x: Array2<f64>,
    /// Cost before the first sweep and after every sweep.
    pub costs: Vec<f64>,
    /// `A x` for the returned image.
    pub projection: Array2<f64>,
}

/// A fixed tomographic cost `1/(2 sigma^2) ||p - A x||_W^2 + h(x)` minus the
/// target `p`, with the per-pixel data curvature `diag(A^T W A) / sigma^2` cached.
pub struct TomoProblem<'a> {
    projector: &'a Projector,
    weights: Option<ArrayView2<'a, f64>>,
    inv_sigma2: f64,
    prior: PriorConfig,
    data_diag: Array2<f64>,
}

impl<'a> TomoProblem<'a> {
    pub fn new(
        projector: &'a Projector,
        weights: Option<ArrayView2<'a, f64>>,
        sigma: f64,
        prior: PriorConfig,
    ) -> Result<Self> {
        prior.validate()?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive and finite"));
        }
        if let Some(w) = weights {
            if w.dim() != projector.sinogram_shape() {
                return Err(Error::shape(
                    format!("{:?} weights", projector.sinogram_shape()),
                    format!("{:?}", w.dim()),
                ));
            }
        }
        let inv_sigma2 = 1.0 / (sigma * sigma);
        let data_diag = projector.column_sq_norms(weights) * inv_sigma2;
        Ok(Self {
            projector,
            weights,
            inv_sigma2,
            prior,
            data_diag,
        })
    }

    pub fn projector(&self) -> &Projector {
        self.projector
    }

    fn check(&self, x: &ArrayView2<f64>, p: &ArrayView2<f64>) -> Result<()> {
        let n = self.projector.geometry().n_side;
        if x.dim() != (n, n) {
            return Err(Error::shape(format!("{n}x{n} image"), format!("{:?}", x.dim())));
        }
        if p.dim() != self.projector.sinogram_shape() {
            return Err(Error::shape(
                format!("{:?} sinogram", self.projector.sinogram_shape()),
                format!("{:?}", p.dim()),
            ));
        }
        Ok(())
    }

    fn data_cost(&self, residual: ArrayView2<f64>) -> f64 {
        0.5 * self.inv_sigma2 * crate::acquisition::weighted_sum_sq(residual, self.weights)
    }

    pub fn cost(&self, x: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<f64> {
        self.check(&x, &p)?;
        let residual = &self.projector.project(x) - &p;
        Ok(self.data_cost(residual.view()) + self.prior.value(x))
    }

    /// Runs `sweeps` sweeps from `x_init` toward the minimizer for target `p`.
    pub fn sweeps(
        &self,
        x_init: ArrayView2<f64>,
        p: ArrayView2<f64>,
        sweeps: usize,
        solver: TomoSolver,
        positivity: bool,
    ) -> Result<TomoOutcome> {
        self.check(&x_init, &p)?;
        if positivity && solver != TomoSolver::Icd {
            return Err(Error::param("positivity", "only supported by the icd solver"));
        }
        let outcome = match solver {
            TomoSolver::Icd => self.icd(x_init, p, sweeps, positivity),
            TomoSolver::Gradient => self.conjugate_gradient(x_init, p, sweeps),
        };
        if outcome.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("tomographic update produced non-finite pixels".into()));
        }
        Ok(outcome)
    }

    fn weighted(&self, residual: &Array2<f64>) -> Array2<f64> {
        match self.weights {
            Some(w) => residual * &w,
            None => residual.clone(),
        }
    }

    fn icd(&self, x_init: ArrayView2<f64>, p: ArrayView2<f64>, sweeps: usize, positivity: bool) -> TomoOutcome {
        let n = self.projector.geometry().n_side;
        let md = self.projector.geometry().num_detector_pixels;
        let mut x = x_init.to_owned();
        if positivity {
            x.mapv_inplace(|v| v.max(0.0));
        }
        // e = A x - p, kept in standard layout for slice access
        let mut e = (&self.projector.project(x.view()) - &p).as_standard_layout().to_owned();
        let weights = self.weights.map(|w| w.as_standard_layout().to_owned());
        let beta = self.prior.beta;
        let mut costs = vec![self.data_cost(e.view()) + self.prior.value(x.view())];
        for _ in 0..sweeps {
            for r in 0..n {
                for c in 0..n {
                    let pixel = r * n + c;
                    let es = e.as_slice().expect("standard layout");
                    let ws = weights.as_ref().map(|w| w.as_slice().expect("standard layout"));
                    let mut theta1 = 0.0;
                    self.projector.for_each_in_column(pixel, |a, start, col| {
                        let off = a * md + start;
                        match ws {
                            Some(ws) => {
                                for (q, &w) in col.iter().enumerate() {
                                    theta1 += w as f64 * ws[off + q] * es[off + q];
                                }
                            }
                            None => {
                                for (q, &w) in col.iter().enumerate() {
                                    theta1 += w as f64 * es[off + q];
                                }
                            }
                        }
                    });
                    theta1 *= self.inv_sigma2;
                    let mut theta2 = self.data_diag[[r, c]];
                    let xs = x[[r, c]];
                    if beta > 0.0 {
                        for (rr, cc, b) in neighbors(n, r, c) {
                            let d = xs - x[[rr, cc]];
                            let k = beta * b * self.prior.surrogate_weight(d);
                            theta1 += k * d;
                            theta2 += k;
                        }
                    }
                    if theta2 <= 0.0 {
                        continue;
                    }
                    let mut delta = -theta1 / theta2;
                    if positivity {
                        delta = delta.max(-xs);
                    }
                    if delta == 0.0 {
                        continue;
                    }
                    x[[r, c]] = xs + delta;
                    let es = e.as_slice_mut().expect("standard layout");
                    self.projector.for_each_in_column(pixel, |a, start, col| {
                        let off = a * md + start;
                        for (q, &w) in col.iter().enumerate() {
                            es[off + q] += delta * w as f64;
                        }
                    });
                }
            }
            costs.push(self.data_cost(e.view()) + self.prior.value(x.view()));
        }
        TomoOutcome {
            x,
            costs,
            projection: e + &p,
        }
    }

    fn gradient_at(&self, x: &Array2<f64>, residual: &Array2<f64>) -> Array2<f64> {
        let mut g = self.projector.backproject(self.weighted(residual).view());
        g *= self.inv_sigma2;
        g += &self.prior.gradient(x.view());
        g
    }

    fn conjugate_gradient(&self, x_init: ArrayView2<f64>, p: ArrayView2<f64>, sweeps: usize) -> TomoOutcome {
        let n = self.projector.geometry().n_side;
        let precond = {
            let mut m = &self.data_diag + &self.prior.diagonal(n);
            m.mapv_inplace(|v| if v > 0.0 { 1.0 / v } else { 1.0 });
            m
        };
        let mut x = x_init.to_owned();
        let mut residual = &self.projector.project(x.view()) - &p;
        let mut cost = self.data_cost(residual.view()) + self.prior.value(x.view());
        let mut costs = vec![cost];
        let mut g = self.gradient_at(&x, &residual);
        let mut z = &g * &precond;
        let mut dir = -&z;
        for _ in 0..sweeps {
            let slope = dot(&g, &dir);
            if slope >= 0.0 || !slope.is_finite() {
                costs.push(cost);
                continue;
            }
            let a_dir = self.projector.project(dir.view());
            let curvature = self.inv_sigma2 * crate::acquisition::weighted_sum_sq(a_dir.view(), self.weights)
                + self.prior.surrogate_curvature(x.view(), dir.view());
            if curvature <= 0.0 {
                costs.push(cost);
                continue;
            }
            let alpha = -slope / curvature;
            let x_new = &x + &(&dir * alpha);
            let residual_new = &residual + &(&a_dir * alpha);
            let cost_new = self.data_cost(residual_new.view()) + self.prior.value(x_new.view());
            if cost_new > cost {
                // roundoff near the optimum; keep the iterate and restart
                dir = -&z;
                costs.push(cost);
                continue;
            }
            x = x_new;
            residual = residual_new;
            cost = cost_new;
            let g_new = self.gradient_at(&x, &residual);
            let z_new = &g_new * &precond;
            let denom = dot(&z, &g);
            let pr = if denom > 0.0 {
                (dot(&z_new, &g_new) - dot(&z_new, &g)) / denom
            } else {
                0.0
            };
            dir = &dir * pr.max(0.0) - &z_new;
            if dot(&g_new, &dir) >= 0.0 {
                dir = -&z_new;
            }
            g = g_new;
            z = z_new;
            costs.push(cost);
        }
        TomoOutcome {
            x,
            costs,
            projection: residual + &p,
        }
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &u, &v| acc + u * v)
}

/// `1/(2 sigma^2) ||p_tilde - A x||^2 + h(x)`.
pub fn tomo_cost(
    x: ArrayView2<f64>,
    p_tilde: ArrayView2<f64>,
    projector: &Projector,
    sigma: f64,
    prior: &PriorConfig,
) -> Result<f64> {
    TomoProblem::new(projector, None, sigma, *prior)?.cost(x, p_tilde)
}

/// The partial tomographic operator `F~_t(p_tilde; x_init)`: `config.n_t` sweeps.
pub fn tomo_partial(
    x_init: ArrayView2<f64>,
    p_tilde: ArrayView2<f64>,
    projector: &Projector,
    config: &TomoConfig,
    prior: &PriorConfig,
) -> Result<TomoOutcome> {
    config.validate()?;
    TomoProblem::new(projector, None, config.sigma, *prior)?.sweeps(
        x_init,
        p_tilde,
        config.n_t,
        config.solver,
        config.positivity,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbirConfig {
    pub iterations: usize,
    pub solver: TomoSolver,
    pub positivity: bool,
}

impl Default for MbirConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            solver: TomoSolver::Icd,
            positivity: false,
        }
    }
}

/// Weighted MBIR from view data, each view treated as a single projection at
/// `view_angles[i]`; starts from a zero image.
pub fn mbir_full(
    y: ArrayView2<f64>,
    view_angles: &[f64],
    geometry: &Geometry,
    weights: Option<ArrayView2<f64>>,
    prior: &PriorConfig,
    config: &MbirConfig,
) -> Result<TomoOutcome> {
    let projector = Projector::new(*geometry, view_angles)?;
    mbir_with_projector(y, &projector, weights, prior, config)
}

/// [`mbir_full`] with a prebuilt projector over the view angles.
pub fn mbir_with_projector(
    y: ArrayView2<f64>,
    projector: &Projector,
    weights: Option<ArrayView2<f64>>,
    prior: &PriorConfig,
    config: &MbirConfig,
) -> Result<TomoOutcome> {
    if config.iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    let n = projector.geometry().n_side;
    let weights = weights.as_ref().map(|w| w.view());
    let problem = TomoProblem::new(projector, weights, 1.0, *prior)?;
    problem.sweeps(
        Array2::zeros((n, n)).view(),
        y,
        config.iterations,
        config.solver,
        config.positivity,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Potential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, angles: usize) -> Projector {
        let geometry = Geometry::square(n, 1.0);
        let thetas: Vec<f64> = (0..angles).map(|a| std::f64::consts::PI * a as f64 / angles as f64).collect();
        Projector::new(geometry, &thetas).unwrap()
    }

    fn random(seed: u64, shape: (usize, usize)) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn(shape, || rng.gen_range(0.0..1.0))
    }

    const SOLVERS: [TomoSolver; 2] = [TomoSolver::Icd, TomoSolver::Gradient];

    #[test]
    fn cost_matches_direct_evaluation() {
        let proj = setup(8, 10);
        let x = random(1, (8, 8));
        let p = random(2, proj.sinogram_shape());
        let prior = PriorConfig::quadratic(0.3);
        let sigma = 0.6;
        let ax = proj.project(x.view());
        let data: f64 = ax.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * sigma * sigma);
        let mut reg = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                for (rr, cc, b) in neighbors(8, r, c) {
                    reg += 0.5 * b * 0.5 * (x[[r, c]] - x[[rr, cc]]).powi(2);
                }
            }
        }
        let want = data + prior.beta * reg;
        let got = tomo_cost(x.view(), p.view(), &proj, sigma, &prior).unwrap();
        assert!((got - want).abs() <= 1e-10 * want);
        let no_prior = tomo_cost(x.view(), p.view(), &proj, sigma, &PriorConfig::quadratic(0.0)).unwrap();
        assert!((no_prior - data).abs() <= 1e-10 * data);
    }

    #[test]
    fn zero_in_zero_out() {
        let proj = setup(8, 6);
        for solver in SOLVERS {
            let cfg = TomoConfig { solver, ..Default::default() };
            let out = tomo_partial(
                Array2::zeros((8, 8)).view(),
                Array2::zeros(proj.sinogram_shape()).view(),
                &proj,
                &cfg,
                &PriorConfig::quadratic(1.0),
            )
            .unwrap();
            assert!(out.x.iter().all(|&v| v == 0.0));
            assert_eq!(out.costs.len(), 6);
        }
    }

    #[test]
    fn sweeps_are_monotone() {
        let proj = setup(12, 15);
        let p = random(3, proj.sinogram_shape());
        let priors = [
            PriorConfig::quadratic(0.5),
            PriorConfig {
                beta: 0.5,
                potential: Potential::Qggmrf { p: 2.0, q: 1.1, t: 0.05 },
            },
        ];
        for solver in SOLVERS {
            for prior in priors {
                let cfg = TomoConfig { n_t: 8, solver, sigma: 0.7, ..Default::default() };
                let out = tomo_partial(Array2::zeros((12, 12)).view(), p.view(), &proj, &cfg, &prior).unwrap();
                assert_eq!(out.costs.len(), 9);
                for w in out.costs.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12), "{solver:?} {prior:?}: {:?}", out.costs);
                }
                assert!(out.costs[8] < 0.5 * out.costs[0]);
            }
        }
    }

    #[test]
    fn fixed_point_is_preserved() {
        let proj = setup(10, 30);
        let truth = random(4, (10, 10));
        let p = proj.project(truth.view());
        let prior = PriorConfig::quadratic(0.0);
        for solver in SOLVERS {
            let cfg = TomoConfig { solver, ..Default::default() };
            let out = tomo_partial(truth.view(), p.view(), &proj, &cfg, &prior).unwrap();
            assert!((out.costs[0] - out.costs[5]).abs() <= 1e-10);
            assert!(out.x.iter().zip(truth.iter()).all(|(a, b)| (a - b).abs() < 1e-8));
        }
    }

    #[test]
    fn strong_prior_flattens_the_image() {
        let proj = setup(8, 12);
        let p = random(5, proj.sinogram_shape());
        let out = mbir_with_projector(
            p.view(),
            &proj,
            None,
            &PriorConfig::quadratic(1e6),
            &MbirConfig { iterations: 200, solver: TomoSolver::Gradient, ..Default::default() },
        )
        .unwrap();
        let mean = out.x.mean().unwrap();
        let spread = out.x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-3 * mean.abs().max(1e-3), "spread {spread}, mean {mean}");
    }

    #[test]
    fn doubling_weights_and_beta_keeps_minimizer() {
        let proj = setup(8, 12);
        let p = random(6, proj.sinogram_shape());
        let w = random(7, proj.sinogram_shape()) + 0.5;
        let w2 = &w * 2.0;
        let cfg = MbirConfig { iterations: 300, solver: TomoSolver::Gradient, ..Default::default() };
        let a = mbir_with_projector(p.view(), &proj, Some(w.view()), &PriorConfig::quadratic(0.4), &cfg).unwrap();
        let b = mbir_with_projector(p.view(), &proj, Some(w2.view()), &PriorConfig::quadratic(0.8), &cfg).unwrap();
        let diff = a.x.iter().zip(b.x.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn positivity_requires_icd() {
        let cfg = TomoConfig { solver: TomoSolver::Gradient, positivity: true, ..Default::default() };
        assert!(cfg.validate().is_err());
        let proj = setup(8, 12);
        let p = -random(8, proj.sinogram_shape());
        let cfg = TomoConfig { positivity: true, n_t: 3, ..Default::default() };
        let out = tomo_partial(Array2::zeros((8, 8)).view(), p.view(), &proj, &cfg, &PriorConfig::quadratic(0.1)).unwrap();
        assert!(out.x.iter().all(|&v| v >= 0.0));
    }
}
