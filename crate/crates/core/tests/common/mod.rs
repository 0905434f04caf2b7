//! Dense and finite-difference oracles shared by the oracle and acceptance targets.
#![allow(dead_code)]

use codex_core::acquisition::apply_c;
use codex_core::deblur::DeblurProblem;
use codex_core::prior::PriorConfig;
use codex_core::projector::{Geometry, Projector};
use codex_core::sampling::{ExposureCode, SamplingPlan};
use codex_core::tomo::{tomo_partial, TomoConfig, TomoSolver};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|a| std::f64::consts::PI * a as f64 / count as f64).collect()
}

/// Dense `A` assembled column by column from projections of unit images.
pub fn dense_projector(projector: &Projector) -> DMatrix<f64> {
    let n = projector.geometry().n_side;
    let (rows, cols) = projector.sinogram_shape();
    let mut a = DMatrix::zeros(rows * cols, n * n);
    for pixel in 0..n * n {
        let mut e = Array2::zeros((n, n));
        e[[pixel / n, pixel % n]] = 1.0;
        for (k, v) in projector.project(e.view()).iter().enumerate() {
            a[(k, pixel)] = *v;
        }
    }
    a
}

pub fn dense_c(plan: &SamplingPlan, code: &ExposureCode) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(plan.m_theta(), plan.n_theta());
    for j in 0..plan.n_theta() {
        let mut e = Array2::zeros((plan.n_theta(), 1));
        e[[j, 0]] = 1.0;
        let col = apply_c(plan, code, e.view()).unwrap();
        for i in 0..plan.m_theta() {
            c[(i, j)] = col[[i, 0]];
        }
    }
    c
}

pub fn flatten(a: &Array2<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

/// Relative distance between `tomo_partial` with a quadratic prior at `n = 16`
/// and the Cholesky solution of its normal equations.
pub fn quadratic_tomo_error(solver: TomoSolver, sweeps: usize) -> f64 {
    let n = 16;
    let geometry = Geometry::square(n, 0.125);
    let projector = Projector::new(geometry, &uniform_angles(24)).unwrap();
    let a = dense_projector(&projector);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p_tilde = Array2::from_shape_simple_fn(projector.sinogram_shape(), || rng.gen_range(0.0..1.0));
    let sigma: f64 = 0.5;
    let prior = PriorConfig::quadratic(0.05);
    let lap = PriorConfig::laplacian(n);
    let lap = DMatrix::from_row_iterator(n * n, n * n, lap.iter().copied());
    let lhs = a.transpose() * &a / (sigma * sigma) + lap * prior.beta;
    let rhs = a.transpose() * flatten(&p_tilde) / (sigma * sigma);
    let want = lhs.cholesky().expect("positive definite").solve(&rhs);

    let config = TomoConfig {
        n_t: sweeps,
        sigma,
        solver,
        positivity: false,
    };
    let got = tomo_partial(Array2::zeros((n, n)).view(), p_tilde.view(), &projector, &config, &prior).unwrap();
    (&flatten(&got.x) - &want).norm() / want.norm()
}

/// Worst relative error of the deblurring gradient against central differences,
/// over random directions and single coordinates of `instances` random problems.
pub fn deblur_gradient_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.gen_range(2..7);
        let n_theta = rng.gen_range(k + 1..4 * k + 3);
        let m_theta = rng.gen_range(1..n_theta + 3);
        let plan = SamplingPlan::with_micro_count(k, n_theta, m_theta).unwrap();
        let mut bits: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
        bits[rng.gen_range(0..k)] = true;
        let code = ExposureCode::new(bits).unwrap();
        let md = rng.gen_range(1..4);
        let p = Array2::from_shape_simple_fn((n_theta, md), || rng.gen_range(0.0..2.5));
        let pt = Array2::from_shape_simple_fn((n_theta, md), || rng.gen_range(0.0..2.5));
        let y = Array2::from_shape_simple_fn((m_theta, md), || rng.gen_range(0.0..2.5));
        let d = Array2::from_shape_simple_fn((m_theta, md), || rng.gen_range(0.2..2.0));
        let sigma = rng.gen_range(0.3..3.0);
        let problem = DeblurProblem::new(&plan, &code, y.view(), d.view(), sigma).unwrap();
        let g = problem.gradient(p.view(), pt.view()).unwrap();
        let h = 1e-5;
        let f = |q: &Array2<f64>| problem.cost(q.view(), pt.view()).unwrap();

        let dir = Array2::from_shape_simple_fn(p.dim(), || rng.gen_range(-1.0..1.0));
        let fd = (f(&(&p + &(&dir * h))) - f(&(&p - &(&dir * h)))) / (2.0 * h);
        let analytic: f64 = g.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-8));
        for _ in 0..3 {
            let idx = [rng.gen_range(0..n_theta), rng.gen_range(0..md)];
            let mut plus = p.clone();
            plus[idx] += h;
            let mut minus = p.clone();
            minus[idx] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            worst = worst.max((fd - g[idx]).abs() / g[idx].abs().max(1e-2));
        }
    }
    worst
}
