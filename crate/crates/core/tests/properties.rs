use codex_core::acquisition::{apply_c, apply_c_transpose, bin_dense_projections};
use codex_core::metrics::nrmse;
use codex_core::prior::{Potential, PriorConfig};
use codex_core::projector::{Geometry, Projector};
use codex_core::sampling::{ExposureCode, SamplingPlan};
use ndarray::Array2;
use num_integer::Integer;
use proptest::prelude::*;

fn code_strategy(k: usize) -> impl Strategy<Value = ExposureCode> {
    (prop::collection::vec(any::<bool>(), k), 0..k).prop_map(|(mut bits, forced)| {
        bits[forced] = true;
        ExposureCode::new(bits).unwrap()
    })
}

fn plan_and_code() -> impl Strategy<Value = (SamplingPlan, ExposureCode)> {
    (1usize..12, 1usize..40, 1usize..50).prop_flat_map(|(k, extra, m_theta)| {
        let plan = SamplingPlan::with_micro_count(k, k + extra, m_theta).unwrap();
        code_strategy(k).prop_map(move |code| (plan.clone(), code))
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coprime_views_visit_every_micro_angle(k in 1usize..80, n_theta in 1usize..300) {
        prop_assume!(k.gcd(&n_theta) == 1);
        let plan = SamplingPlan::with_micro_count(k, n_theta, n_theta).unwrap();
        let mut seen = vec![false; n_theta];
        for i in 0..n_theta {
            let j = plan.micro_index(i, 0);
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        prop_assert!(plan.check_unique_angles().unique);
    }

    #[test]
    fn blur_angle_is_k_micro_steps(k in 1usize..100, m in 1usize..30, n in 1usize..100) {
        prop_assume!(m * k > n);
        let plan = SamplingPlan::new(k, m, n, 1).unwrap();
        prop_assert_eq!(plan.n_theta(), m * k - n);
        let ratio = plan.blur_angle_rad() / plan.micro_step_rad();
        prop_assert!((ratio - k as f64).abs() < 1e-9 * k as f64);
    }

    #[test]
    fn coded_sum_is_row_stochastic_and_adjoint((plan, code) in plan_and_code(), seed in any::<u64>()) {
        let md = 3;
        let ones = Array2::ones((plan.n_theta(), md));
        let rows = apply_c(&plan, &code, ones.view()).unwrap();
        prop_assert!(rows.iter().all(|v| (v - 1.0).abs() < 1e-12));

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = Array2::from_shape_simple_fn((plan.n_theta(), md), || rng.gen_range(-1.0..1.0));
        let v = Array2::from_shape_simple_fn((plan.m_theta(), md), || rng.gen_range(-1.0..1.0));
        let lhs: f64 = (&apply_c(&plan, &code, p.view()).unwrap() * &v).sum();
        let rhs: f64 = (&p * &apply_c_transpose(&plan, &code, v.view()).unwrap()).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn binning_constant_data_is_constant((plan, code) in plan_and_code(), level in 0.0f64..5.0) {
        let dense = Array2::from_elem((plan.n_theta(), 4), level);
        let coded = bin_dense_projections(dense.view(), &plan, &code).unwrap();
        prop_assert!(coded.iter().all(|v| (v - level).abs() < 1e-12));
    }

    #[test]
    fn projector_adjoint(n in 2usize..10, angles in prop::collection::vec(0.0f64..6.3, 1..8), x in matrix(10, 10), seed in any::<u64>()) {
        let geometry = Geometry::square(n, 1.0);
        let projector = Projector::new(geometry, &angles).unwrap();
        let img = x.slice(ndarray::s![..n, ..n]).to_owned();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_simple_fn(projector.sinogram_shape(), || rng.gen_range(-1.0..1.0));
        let lhs: f64 = (&projector.project(img.view()) * &s).sum();
        let rhs: f64 = (&img * &projector.backproject(s.view())).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn nrmse_reports_scale(x0 in matrix(4, 4), alpha in -3.0f64..3.0) {
        prop_assume!(x0.iter().any(|v| v.abs() > 1e-3));
        let got = nrmse((&x0 * alpha).view(), x0.view()).unwrap();
        prop_assert!((got - (alpha - 1.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn prior_ignores_constant_offsets(x in matrix(6, 6), offset in -10.0f64..10.0, q in 1.0f64..2.0) {
        for potential in [Potential::Quadratic, Potential::Qggmrf { p: 2.0, q, t: 0.3 }] {
            let prior = PriorConfig { beta: 0.8, potential };
            let a = prior.value(x.view());
            let b = prior.value((&x + offset).view());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
