use collapse_core::central_path::{central_gradient, central_loss, central_loss_direct, covariance_rates};
use collapse_core::linalg::{max_abs, singular_values_desc};
use collapse_core::metrics::{nc1_fisher, nc1_per_class, nc1_tilde, nc2, nc3, DEFAULT_PINV_TOL};
use collapse_core::model::{
    build_label_matrix, collapsed_minimizer, objective_plain, optimal_weights, orthonormal_frame, Dims,
    FeatureMatrix, ModelParams, WeightMatrix,
};
use collapse_core::perturbation::{
    commutation_matrix, compare_block_spectrum, extract_block, neumann_response,
};
use collapse_core::prox::{solve_prox, Init, SolveConfig};
use collapse_core::random::{clustered_features, gaussian_features, gaussian_matrix, seeded_rng};
use collapse_core::stats::ClassStats;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dims_strategy(max_k: usize, max_n: usize, max_d: usize) -> impl Strategy<Value = Dims> {
    (2..=max_k, 1..=max_n)
        .prop_flat_map(move |(k, n)| (Just(k), Just(n), k..=max_d))
        .prop_map(|(k, n, d)| Dims::new(k, n, d).unwrap())
}

/// λ_W, λ_H with c = √(λ_Hλ_W) < 0.95
fn collapsible_lambdas() -> impl Strategy<Value = (f64, f64)> {
    (0.2f64..4.0, 0.05f64..0.95).prop_map(|(lw, c)| (lw, c * c / lw))
}

fn fd_max_rel_error(h: &FeatureMatrix, p: &ModelParams) -> f64 {
    let g = central_gradient(h, p).unwrap();
    let step = 1e-5 * (1.0 + h.frobenius());
    let mut fd = DMatrix::zeros(g.nrows(), g.ncols());
    for idx in 0..g.len() {
        let mut plus = h.as_matrix().clone();
        let mut minus = h.as_matrix().clone();
        plus[idx] += step;
        minus[idx] -= step;
        let fp = central_loss(&FeatureMatrix::new(plus, h.dims()).unwrap(), p).unwrap();
        let fm = central_loss(&FeatureMatrix::new(minus, h.dims()).unwrap(), p).unwrap();
        fd[idx] = (fp - fm) / (2.0 * step);
    }
    max_abs(&(&g - &fd)) / max_abs(&fd).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn label_matrix_has_kn_ones(dims in dims_strategy(6, 6, 8)) {
        let y = build_label_matrix(dims);
        prop_assert_eq!(y.as_matrix().norm_squared(), dims.total_samples() as f64);
        for col in y.as_matrix().column_iter() {
            prop_assert_eq!(col.sum(), 1.0);
        }
    }

    #[test]
    fn optimal_weights_are_optimal(dims in dims_strategy(4, 4, 6), lw in 0.1f64..3.0, lh in 0.0f64..1.0, seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let mut rng = seeded_rng(seed);
        let h = gaussian_features(&mut rng, dims, 1.0);
        let best = objective_plain(&optimal_weights(&h, &p).unwrap(), &h, &p).unwrap();
        for _ in 0..100 {
            let w = WeightMatrix::new(gaussian_matrix(&mut rng, dims.classes, dims.feature_dim), dims).unwrap();
            prop_assert!(best <= objective_plain(&w, &h, &p).unwrap());
        }
    }

    #[test]
    fn collapsed_minimizer_structure(dims in dims_strategy(6, 5, 10), (lw, lh) in collapsible_lambdas(), seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let m = collapsed_minimizer(&p, seed).unwrap();
        let stats = ClassStats::from_features(&m.features);
        for k in 0..dims.classes {
            for i in 1..dims.per_class {
                prop_assert_eq!(m.features.sample(k, i), m.features.sample(k, 0));
            }
            prop_assert!((stats.class_means.column(k).norm_squared() - m.rho).abs() <= 1e-10 * (1.0 + m.rho));
        }
        let gram = stats.class_means.transpose() * &stats.class_means;
        let target = DMatrix::identity(dims.classes, dims.classes) * m.rho;
        prop_assert!(max_abs(&(gram - target)) <= 1e-10 * (1.0 + m.rho));
        let frame = orthonormal_frame(dims.feature_dim, dims.classes, seed);
        prop_assert_eq!(frame.as_slice(), m.frame.as_slice());
    }

    #[test]
    fn closed_form_loss_matches_direct(dims in dims_strategy(5, 6, 12), lw in 0.1f64..3.0, lh in 0.0f64..1.0, scale in 0.01f64..10.0, seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let mut rng = seeded_rng(seed);
        let h = gaussian_features(&mut rng, dims, scale);
        let a = central_loss(&h, &p).unwrap();
        let b = central_loss_direct(&h, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn gradient_matches_fd_near_collapse(dims in dims_strategy(4, 3, 6), (lw, lh) in collapsible_lambdas(), seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let m = collapsed_minimizer(&p, seed).unwrap();
        let mut rng = seeded_rng(seed ^ 1);
        let noise = gaussian_matrix(&mut rng, dims.feature_dim, dims.total_samples()) * 1e-2;
        let h = FeatureMatrix::new(m.features.as_matrix() + noise, dims).unwrap();
        prop_assert!(fd_max_rel_error(&h, &p) <= 1e-6);
    }

    #[test]
    fn gradient_growth_bound(dims in dims_strategy(5, 6, 12), lw in 0.1f64..3.0, lh in 0.0f64..1.0, scale in 0.001f64..100.0, seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let mut rng = seeded_rng(seed);
        let h = gaussian_features(&mut rng, dims, scale);
        let m = (3.0 / lw + lh) / dims.total_samples() as f64;
        prop_assert!(central_gradient(&h, &p).unwrap().norm() <= m * h.frobenius());
    }

    #[test]
    fn covariance_rate_signs(dims in dims_strategy(5, 5, 8), lw in 0.1f64..3.0, lh in 0.0f64..1.0, spread in 0.05f64..3.0, seed in any::<u64>()) {
        let p = ModelParams::new(dims, lw, lh, 1.0).unwrap();
        let mut rng = seeded_rng(seed);
        let h = clustered_features(&mut rng, dims, spread);
        let stats = ClassStats::from_features(&h);
        let r = covariance_rates(&h, &p).unwrap();
        prop_assert!(max_abs(&(&r.within - r.within.transpose())) == 0.0);
        let scale = stats.trace_within() + stats.trace_between();
        prop_assert!(r.within.trace() + 2.0 * lh * stats.trace_within() <= 1e-14 * scale);
        prop_assert!(r.between.trace() + 2.0 * lh * stats.trace_between() > 0.0);
    }

    #[test]
    fn nc1_invariances(dims in dims_strategy(4, 4, 7), spread in 0.1f64..2.0, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let h = clustered_features(&mut rng, dims, spread);
        let shift = gaussian_matrix(&mut rng, dims.feature_dim, 1);
        let mut shifted = h.as_matrix().clone();
        for mut c in shifted.column_iter_mut() {
            c += &shift;
        }
        let q = gaussian_matrix(&mut rng, dims.feature_dim, dims.feature_dim).qr().q();
        let rotated = &q * h.as_matrix();
        let base = ClassStats::from_features(&h);
        let a = nc1_tilde(&base).unwrap();
        let f = nc1_fisher(&base, DEFAULT_PINV_TOL).unwrap();
        for other in [shifted, rotated] {
            let s = ClassStats::from_features(&FeatureMatrix::new(other, dims).unwrap());
            prop_assert!((nc1_tilde(&s).unwrap() - a).abs() <= 1e-9 * (1.0 + a));
            prop_assert!((nc1_fisher(&s, DEFAULT_PINV_TOL).unwrap() - f).abs() <= 1e-7 * (1.0 + f));
        }
        let per = nc1_per_class(&base, DEFAULT_PINV_TOL).unwrap();
        prop_assert!((per.mean() - f).abs() <= 1e-12 * (1.0 + f));
    }

    #[test]
    fn nc2_nc3_scale_invariant(dims in dims_strategy(5, 3, 7), spread in 0.1f64..2.0, s_h in 0.01f64..100.0, s_w in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let h = clustered_features(&mut rng, dims, spread);
        let w = WeightMatrix::new(gaussian_matrix(&mut rng, dims.classes, dims.feature_dim), dims).unwrap();
        let a = ClassStats::from_features(&h);
        let b = ClassStats::from_features(&FeatureMatrix::new(h.as_matrix() * s_h, dims).unwrap());
        let wb = WeightMatrix::new(w.as_matrix() * s_w, dims).unwrap();
        prop_assert!((nc2(&a).unwrap() - nc2(&b).unwrap()).abs() <= 1e-12);
        prop_assert!((nc3(&w, &a).unwrap() - nc3(&wb, &b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn commutation_swaps_kronecker(d in 1usize..5, k in 1usize..5, seed in any::<u64>()) {
        let km = commutation_matrix(d, k);
        let mut rng = seeded_rng(seed);
        let x1 = gaussian_matrix(&mut rng, d, d);
        let x2 = gaussian_matrix(&mut rng, k, k);
        prop_assert!(max_abs(&(km.transpose() * x1.kronecker(&x2) * &km - x2.kronecker(&x1))) < 1e-13);
        let x = gaussian_matrix(&mut rng, k, 1);
        let y = gaussian_matrix(&mut rng, d, 3);
        prop_assert!(max_abs(&(&km * x.kronecker(&y) - y.kronecker(&x))) < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prox_stationarity_and_beta_consistency(dims in dims_strategy(3, 3, 5), seed in any::<u64>(), beta in 50.0f64..2000.0) {
        let p = ModelParams::new(dims, 1.0, 0.25, beta).unwrap();
        let p2 = p.with_beta(2.0 * beta).unwrap();
        let mut rng = seeded_rng(seed);
        let h0 = clustered_features(&mut rng, dims, 0.5);
        let cfg = SolveConfig::default();
        let s1 = solve_prox(&h0, &p, &cfg).unwrap();
        let s2 = solve_prox(&h0, &p2, &cfg).unwrap();
        let kn = dims.total_samples() as f64;
        for (s, b) in [(&s1, beta), (&s2, 2.0 * beta)] {
            let gl = central_gradient(&s.features, &p).unwrap().norm();
            prop_assert!(s.residual <= cfg.grad_tol * (kn / b) * (1.0 + gl));
            prop_assert_eq!(&s.weights, &optimal_weights(&s.features, &p).unwrap());
        }
        let d1 = (s1.features.as_matrix() - h0.as_matrix()).norm();
        let d2 = (s2.features.as_matrix() - h0.as_matrix()).norm();
        prop_assert!(d2 <= d1 + 1e-8);
    }

    #[test]
    fn prox_unique_near_collapse(seed in any::<u64>(), size in 1e-4f64..1e-2) {
        let dims = Dims::new(3, 3, 5).unwrap();
        let p = ModelParams::new(dims, 2.0, 0.125, 1e3).unwrap();
        let m = collapsed_minimizer(&p, seed).unwrap();
        let mut rng = seeded_rng(seed);
        let delta = gaussian_matrix(&mut rng, 5, 9);
        let h0 = FeatureMatrix::new(m.features.as_matrix() + &delta / delta.norm() * size, dims).unwrap();
        let mut sols = Vec::new();
        for i in 0..5u64 {
            let init = match i {
                0 => Init::FromH0,
                1 => Init::FromCollapsed { seed },
                _ => Init::Custom(FeatureMatrix::new(
                    h0.as_matrix() + gaussian_matrix(&mut rng, 5, 9) * 0.1,
                    dims,
                ).unwrap()),
            };
            let cfg = SolveConfig { init, ..SolveConfig::default() };
            sols.push(solve_prox(&h0, &p, &cfg).unwrap().features);
        }
        for s in &sols[1..] {
            prop_assert!(max_abs(&(s.as_matrix() - sols[0].as_matrix())) <= 1e-6);
        }
    }

    #[test]
    fn neumann_spectra_at_collapse(k in 2usize..4, n in 1usize..4, extra in 1usize..3, (lw, lh) in collapsible_lambdas(), beta in 100.0f64..1000.0, seed in any::<u64>()) {
        let dims = Dims::new(k, n, k + extra).unwrap();
        let p = ModelParams::new(dims, lw, lh, beta).unwrap();
        let m = collapsed_minimizer(&p, seed).unwrap();
        let f = neumann_response(&m.weights, &m.features, &p).unwrap();
        for a in 0..k {
            for b in 0..k {
                let s = compare_block_spectrum(&f, a, b).unwrap();
                prop_assert!(s.max_abs_error().unwrap() <= 1e-8);
            }
        }
        // full-F sanity: all singular values in (0, 1 + λ_H/β]
        let sv = singular_values_desc(f.dense().unwrap());
        prop_assert!(sv[0] <= 1.0 + lh / beta + 1e-12);
        prop_assert!(*sv.last().unwrap() > 0.0);
        // intra-class dominance
        let c = p.c();
        let diag_min = *singular_values_desc(&extract_block(&f, 0, 0).unwrap()).last().unwrap();
        let off_max = singular_values_desc(&extract_block(&f, 0, 1).unwrap())[0];
        let sigma_min = 1.0 - (lh / lw).sqrt() / beta;
        // with one sample per class there is no within-class plateau; the closed form gives the floor
        let closed = compare_block_spectrum(&f, 0, 0).unwrap().analytic.unwrap();
        let diag_floor = closed.values.iter().copied().fold(f64::INFINITY, f64::min);
        if n > 1 {
            prop_assert!((diag_floor - sigma_min).abs() <= 1e-12);
        }
        prop_assert!((diag_min - diag_floor).abs() <= 1e-10);
        let exact_ratio = 2.0 * lh * (1.0 - c) / beta / diag_floor;
        prop_assert!((off_max / diag_min - exact_ratio).abs() <= 1e-8);
        // the looser 4λ_Hλ_W form dominates the exact ratio only when λ_W ≥ 1/2
        if lw >= 0.5 {
            let bound = 4.0 * lh * lw * (1.0 - c) / beta / sigma_min;
            prop_assert!(off_max / diag_min <= bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}
