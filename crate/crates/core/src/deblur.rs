//! Projection-domain MAP deblurring: the `F_d` step of the ADMM loop.
//!
//! Minimizes, over micro-projections `p`,
//!
//! ```text
//! f_d(p) = 1/2 ||y + log(C exp(-p))||_D^2 + 1/(2 sigma^2) ||p - p_tilde||^2
//! ```
//!
//! with a fixed number of gradient steps, each step size chosen by halving
//! until the Armijo condition holds.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::acquisition::{apply_c, apply_c_transpose, weighted_sum_sq};
use crate::error::{Error, Result};
use crate::sampling::{ExposureCode, SamplingPlan};

/// `exp(-p)` is evaluated with `p` clamped to this range.
pub const EXPONENT_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurConfig {
    /// Gradient steps per call.
    pub n_p: usize,
    /// Initial step size of every line search.
    pub eta0: f64,
    /// Armijo sufficient-decrease constant.
    pub epsilon: f64,
    /// Coupling scale of the proximal term; overridden by the ADMM driver.
    pub sigma: f64,
    pub max_halvings: usize,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        Self {
            n_p: 5,
            eta0: 1.0,
            epsilon: 1e-4,
            sigma: 1.0,
            max_halvings: 30,
        }
    }
}

impl DeblurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 {
            return Err(Error::param("n_p", "must be at least 1"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::param("eta0", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param("epsilon", "must lie in (0, 1)"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma", "must be positive"));
        }
        if self.max_halvings == 0 {
            return Err(Error::param("max_halvings", "must be at least 1"));
        }
        Ok(())
    }
}

/// Fixed data of one deblurring problem: measurements, weights and the code.
#[derive(Debug, Clone, Copy)]
pub struct DeblurProblem<'a> {
    pub plan: &'a SamplingPlan,
    pub code: &'a ExposureCode,
    pub y: ArrayView2<'a, f64>,
    pub weights: ArrayView2<'a, f64>,
    pub sigma: f64,
}

/// Intermediate quantities shared by the cost and the gradient.
struct Evaluation {
    transmission: Array2<f64>,
    coded: Array2<f64>,
    residual: Array2<f64>,
    clamped: usize,
}

/// Output of [`DeblurProblem::partial`].
#[derive(Debug, Clone)]
pub struct DeblurOutcome {
    pub p: Array2<f64>,
    /// `f_d` before the first step and after every step.
    pub costs: Vec<f64>,
    /// Steps whose line search exhausted `max_halvings`; `p` was left unchanged.
    pub stalls: usize,
    /// Entries of `p` that hit the exponent clamp, summed over evaluations.
    pub clamp_events: usize,
}

impl<'a> DeblurProblem<'a> {
    pub fn new(
        plan: &'a SamplingPlan,
        code: &'a ExposureCode,
        y: ArrayView2<'a, f64>,
        weights: ArrayView2<'a, f64>,
        sigma: f64,
    ) -> Result<Self> {
        plan.check_code(code)?;
        if y.nrows() != plan.m_theta() {
            return Err(Error::shape(format!("{} view rows", plan.m_theta()), y.nrows()));
        }
        if weights.dim() != y.dim() {
            return Err(Error::shape(format!("{:?} weights", y.dim()), format!("{:?}", weights.dim())));
        }
        if !(sigma > 0.0) {
            return Err(Error::param("sigma", "must be positive"));
        }
        Ok(Self {
            plan,
            code,
            y,
            weights,
            sigma,
        })
    }

    fn inv_sigma2(&self) -> f64 {
        if self.sigma.is_infinite() {
            0.0
        } else {
            1.0 / (self.sigma * self.sigma)
        }
    }

    fn check_micro(&self, p: &ArrayView2<f64>) -> Result<()> {
        let expected = (self.plan.n_theta(), self.y.ncols());
        if p.dim() != expected {
            return Err(Error::shape(format!("{expected:?} micro-projections"), format!("{:?}", p.dim())));
        }
        Ok(())
    }

    fn evaluate(&self, p: ArrayView2<f64>) -> Result<Evaluation> {
        let mut clamped = 0;
        let transmission = p.mapv(|v| {
            if v.abs() > EXPONENT_CLAMP {
                clamped += 1;
            }
            (-v.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)).exp()
        });
        let coded = apply_c(self.plan, self.code, transmission.view())?;
        let mut residual = coded.mapv(f64::ln);
        residual += &self.y;
        Ok(Evaluation {
            transmission,
            coded,
            residual,
            clamped,
        })
    }

    fn proximal_cost(&self, p: ArrayView2<f64>, p_tilde: ArrayView2<f64>) -> f64 {
        let inv = self.inv_sigma2();
        if inv == 0.0 {
            return 0.0;
        }
        0.5 * inv * Zip::from(p).and(p_tilde).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
    }

    fn cost_of(&self, eval: &Evaluation, p: ArrayView2<f64>, p_tilde: ArrayView2<f64>) -> f64 {
        0.5 * weighted_sum_sq(eval.residual.view(), Some(self.weights)) + self.proximal_cost(p, p_tilde)
    }

    fn gradient_of(&self, eval: &Evaluation, p: ArrayView2<f64>, p_tilde: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut scaled = Array2::<f64>::zeros(eval.residual.dim());
        Zip::from(&mut scaled)
            .and(&eval.residual)
            .and(&self.weights)
            .and(&eval.coded)
            .for_each(|s, &r, &d, &c| *s = d * r / c);
        let back = apply_c_transpose(self.plan, self.code, scaled.view())?;
        let inv = self.inv_sigma2();
        let mut g = Array2::<f64>::zeros(back.dim());
        Zip::from(&mut g)
            .and(&back)
            .and(&eval.transmission)
            .and(p)
            .and(p_tilde)
            .for_each(|g, &b, &t, &p, &pt| *g = -t * b + inv * (p - pt));
        Ok(g)
    }

    /// `f_d(p)` for the proximal center `p_tilde`.
    pub fn cost(&self, p: ArrayView2<f64>, p_tilde: ArrayView2<f64>) -> Result<f64> {
        self.check_micro(&p)?;
        self.check_micro(&p_tilde)?;
        let eval = self.evaluate(p)?;
        Ok(self.cost_of(&eval, p, p_tilde))
    }

    /// Gradient of `f_d`:
    /// `-diag(e^{-p}) C^T diag(C e^{-p})^{-1} D r + (p - p_tilde) / sigma^2`.
    pub fn gradient(&self, p: ArrayView2<f64>, p_tilde: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_micro(&p)?;
        self.check_micro(&p_tilde)?;
        let eval = self.evaluate(p)?;
        self.gradient_of(&eval, p, p_tilde)
    }

    /// Runs exactly `config.n_p` Armijo-backtracking gradient steps from `p_init`.
    pub fn partial(
        &self,
        p_init: ArrayView2<f64>,
        p_tilde: ArrayView2<f64>,
        config: &DeblurConfig,
    ) -> Result<DeblurOutcome> {
        config.validate()?;
        self.check_micro(&p_init)?;
        self.check_micro(&p_tilde)?;
        let mut p = p_init.to_owned();
        let mut eval = self.evaluate(p.view())?;
        let mut clamp_events = eval.clamped;
        let mut cost = self.cost_of(&eval, p.view(), p_tilde);
        let mut costs = vec![cost];
        let mut stalls = 0;
        for _ in 0..config.n_p {
            let g = self.gradient_of(&eval, p.view(), p_tilde)?;
            let g_norm2: f64 = g.iter().map(|v| v * v).sum();
            if g_norm2 == 0.0 {
                costs.push(cost);
                continue;
            }
            let mut eta = config.eta0;
            let mut accepted = None;
            for _ in 0..=config.max_halvings {
                let trial = &p - &(&g * eta);
                let trial_eval = self.evaluate(trial.view())?;
                clamp_events += trial_eval.clamped;
                let trial_cost = self.cost_of(&trial_eval, trial.view(), p_tilde);
                if trial_cost <= cost - eta * config.epsilon * g_norm2 {
                    accepted = Some((trial, trial_eval, trial_cost));
                    break;
                }
                eta *= 0.5;
            }
            match accepted {
                Some((trial, trial_eval, trial_cost)) => {
                    p = trial;
                    eval = trial_eval;
                    cost = trial_cost;
                }
                None => stalls += 1,
            }
            costs.push(cost);
        }
        Ok(DeblurOutcome {
            p,
            costs,
            stalls,
            clamp_events,
        })
    }
}

/// `f_d(p)`; see [`DeblurProblem::cost`].
#[allow(clippy::too_many_arguments)]
pub fn deblur_cost(
    p: ArrayView2<f64>,
    p_tilde: ArrayView2<f64>,
    y: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    sigma: f64,
    plan: &SamplingPlan,
    code: &ExposureCode,
) -> Result<f64> {
    DeblurProblem::new(plan, code, y.view(), weights.view(), sigma)?.cost(p, p_tilde)
}

/// Gradient of `f_d`; see [`DeblurProblem::gradient`].
pub fn deblur_gradient(
    p: ArrayView2<f64>,
    p_tilde: ArrayView2<f64>,
    y: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    sigma: f64,
    plan: &SamplingPlan,
    code: &ExposureCode,
) -> Result<Array2<f64>> {
    DeblurProblem::new(plan, code, y.view(), weights.view(), sigma)?.gradient(p, p_tilde)
}

/// The partial deblurring operator `F~_d(p_tilde; p_init)`.
pub fn deblur_partial(
    p_init: ArrayView2<f64>,
    p_tilde: ArrayView2<f64>,
    y: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    config: &DeblurConfig,
    plan: &SamplingPlan,
    code: &ExposureCode,
) -> Result<DeblurOutcome> {
    DeblurProblem::new(plan, code, y.view(), weights.view(), config.sigma)?.partial(p_init, p_tilde, config)
}
