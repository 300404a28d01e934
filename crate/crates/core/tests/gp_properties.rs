use failop_core::incremental_gp::{incremental_update, relevance_scores, select_replacement, UpdateBudget, UpdateOptions};
use failop_core::kernel_gp::{build_kernel_matrix, GpModel, RbfKernelParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn points(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=4, 1usize..=20).prop_flat_map(|(d, n)| (points(d, n), prop::collection::vec(-1.0f64..1.0, n)))
}

/// Posterior from an LU solve of the regularized system, sharing no code with the model.
fn dense_posterior(params: &RbfKernelParams, noise_var: f64, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let r2: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b).powi(2)).sum();
        params.theta_f * (-r2 / (params.l_f * params.l_f)).exp()
    });
    let kx = DVector::from_fn(n, |i, _| {
        let r2: f64 = xs[i].iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        params.theta_f * (-r2 / (params.l_f * params.l_f)).exp()
    });
    let lu = (k + DMatrix::identity(n, n) * noise_var).lu();
    let beta = lu.solve(&DVector::from_column_slice(ys)).unwrap();
    let v = lu.solve(&kx).unwrap();
    (kx.dot(&beta), params.theta_f - kx.dot(&v))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_matches_dense_solve((xs, ys) in dataset(), probe in prop::collection::vec(-3.0f64..3.0, 4)) {
        let params = RbfKernelParams::new(1.0, 1.5).unwrap();
        let m = GpModel::from_data(params, 0.1, 20, xs.clone(), ys.clone()).unwrap();
        let x = &probe[..xs[0].len()];
        let post = m.posterior(x).unwrap();
        let (mean, var) = dense_posterior(&params, m.noise_var(), &xs, &ys, x);
        prop_assert!(close(post.mean, mean, 1e-8), "mean {} vs {}", post.mean, mean);
        prop_assert!(close(post.variance(), var.max(0.0), 1e-8), "var {} vs {}", post.variance(), var);
        prop_assert!(post.variance() >= 0.0);
    }

    #[test]
    fn kernel_matrix_is_symmetric_psd(xs in (1usize..=4, 1usize..=20).prop_flat_map(|(d, n)| points(d, n)), l in 0.1f64..5.0) {
        let params = RbfKernelParams::new(2.0, l).unwrap();
        let k = build_kernel_matrix(&params, &xs).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        let min_eig = k.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-10, "min eigenvalue {}", min_eig);
    }

    #[test]
    fn interpolates_training_points(xs in points(2, 8), ys in prop::collection::vec(-1.0f64..1.0, 8)) {
        // Spread points apart so the kernel matrix is comfortably conditioned.
        let xs: Vec<Vec<f64>> = xs.iter().enumerate().map(|(i, x)| vec![x[0] + 10.0 * i as f64, x[1]]).collect();
        let m = GpModel::from_data(RbfKernelParams::new(1.0, 1.0).unwrap(), 1e-6, 20, xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = m.posterior(x).unwrap();
            prop_assert!((p.mean - y).abs() < 1e-4, "mean {} vs {}", p.mean, y);
        }
    }

    #[test]
    fn optimization_never_worsens_objective((xs, ys) in dataset()) {
        let m = GpModel::from_data(RbfKernelParams::new(1.0, 1.0).unwrap(), 0.1, 20, xs, ys).unwrap();
        let out = m.optimize_hyperparameters().unwrap();
        prop_assert!(out.objective <= out.initial_objective + 1e-9);
        prop_assert!(out.params.theta_f >= 1e-3 && out.params.theta_f <= 1e3);
        prop_assert!(out.params.l_f >= 1e-2 && out.params.l_f <= 1e2);
    }

    #[test]
    fn stream_stays_consistent(
        d in 1usize..=4,
        stream in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 4), -1.0f64..1.0), 1..60),
    ) {
        let budget = UpdateBudget::new(10).unwrap();
        let opts = UpdateOptions { verify: false, ..UpdateOptions::default() };
        let mut m = GpModel::new(RbfKernelParams::new(1.0, 1.0).unwrap(), 0.05, 10).unwrap();
        for (x, y) in &stream {
            let x = &x[..d];
            let before = m.dataset().xs().to_vec();
            let scores = (!before.is_empty()).then(|| relevance_scores(&before, x, m.params()));
            let out = incremental_update(&mut m, x, *y, budget, opts).unwrap();
            prop_assert!(m.len() <= 10);
            if let Some(idx) = out.replaced {
                // the evicted point was the least relevant one
                prop_assert_eq!(Some(idx), select_replacement(&scores.unwrap()));
            }
            prop_assert!(m.inverse_residual() < 1e-6);
        }
        let batch = GpModel::from_data(*m.params(), 0.05, 10, m.dataset().xs().to_vec(), m.dataset().ys().to_vec()).unwrap();
        for (x, _) in stream.iter().take(5) {
            let a = m.posterior(&x[..d]).unwrap();
            let b = batch.posterior(&x[..d]).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-6);
            prop_assert!((a.std - b.std).abs() < 1e-6);
        }
    }

    #[test]
    fn replacement_target_invariant_under_theta_scaling(
        xs in points(3, 12),
        x_new in prop::collection::vec(-3.0f64..3.0, 3),
        scale in 0.01f64..100.0,
    ) {
        let a = RbfKernelParams::new(1.0, 1.0).unwrap();
        let b = RbfKernelParams::new(scale, 1.0).unwrap();
        prop_assert_eq!(
            select_replacement(&relevance_scores(&xs, &x_new, &a)),
            select_replacement(&relevance_scores(&xs, &x_new, &b))
        );
    }

    #[test]
    fn information_gain_grows_with_data(xs in points(2, 10)) {
        let params = RbfKernelParams::new(1.0, 1.0).unwrap();
        let mut last = 0.0;
        for n in 1..=xs.len() {
            let m = GpModel::from_data(params, 0.1, 20, xs[..n].to_vec(), vec![0.0; n]).unwrap();
            let ig = m.information_gain().unwrap();
            prop_assert!(ig >= last - 1e-12);
            last = ig;
        }
    }
}
