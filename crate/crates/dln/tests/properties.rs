//! Property tests for the algebraic invariants: factorization round trips,
//! parametrization identities, operator inverses and serialization.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dln::flows;
use dln::harness::config::ExperimentConfig;
use dln::io::fmt_f64;
use dln::matops;
use dln::network::{self, NetworkState};
use dln::thermo;

type Matrix = DMatrix<f64>;

fn matrix_strategy(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| Matrix::from_row_slice(d, d, &v))
}

fn dim_and_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=4).prop_flat_map(matrix_strategy)
}

/// Strictly descending positive singular values with a safe gap.
fn sigma_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.3f64..2.0, d).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for i in 1..v.len() {
            // Enforce separation so degenerate-spectrum paths stay out.
            v[i] = v[i].min(v[i - 1] * 0.9 - 1e-3).max(1e-3);
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_round_trip(w in dim_and_matrix()) {
        let svd = matops::svd_ordered(&w).unwrap();
        let scale = w.norm().max(1.0);
        prop_assert!((svd.reconstruct() - &w).norm() <= 1e-11 * scale);
        prop_assert!(matops::orthogonality_defect(&svd.q_left) <= 1e-11);
        prop_assert!(matops::orthogonality_defect(&svd.q_right) <= 1e-11);
        for k in 1..svd.dim() {
            prop_assert!(svd.sigma[k - 1] >= svd.sigma[k]);
        }
    }

    #[test]
    fn polar_cross_relations(w in dim_and_matrix()) {
        let left = matops::polar_left(&w).unwrap();
        let scale = w.norm().max(1.0);
        prop_assert!((&left.orthogonal * &left.psd - &w).norm() <= 1e-10 * scale);
        // P is the psd square root of WᵀW.
        prop_assert!((&left.psd * &left.psd - w.transpose() * &w).norm() <= 1e-9 * scale * scale);
        if !left.rank_deficient {
            let svd = matops::svd_ordered(&w).unwrap();
            let q = &svd.q_left * svd.q_right.transpose();
            prop_assert!((&left.orthogonal - q).norm() <= 1e-10);
        }
    }

    #[test]
    fn vandermonde_antisymmetry(mut values in prop::collection::vec(-3.0f64..3.0, 2..6), k in 0usize..4) {
        let k = k % (values.len() - 1);
        let v1 = matops::vandermonde(&values);
        values.swap(k, k + 1);
        let v2 = matops::vandermonde(&values);
        prop_assert!((v1 + v2).abs() <= 1e-12 * v1.abs().max(1.0));
    }

    #[test]
    fn end_to_end_is_the_layer_product(seed in 0u64..1_000, d in 1usize..=3, n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = network::init_random(d, n, 1.0, network::InitMode::Gaussian, &mut rng).unwrap();
        let mut w = Matrix::identity(d, d);
        for p in 1..=n {
            w = state.layer(p) * w;
        }
        prop_assert!((state.end_to_end() - &w).norm() <= 1e-12 * w.norm().max(1.0));
    }

    #[test]
    fn balanced_coords_identity(seed in 0u64..1_000, d in 1usize..=3, n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = network::random_balanced_coords(d, n, 1.0, &mut rng).unwrap();
        let state = coords.to_state();
        prop_assert!(state.balance_residual() <= 1e-11);
        let expected = coords.end_to_end_svd().reconstruct();
        prop_assert!((state.end_to_end() - expected).norm() <= 1e-11);
    }

    #[test]
    fn polar_params_round_trip(seed in 0u64..1_000, n in 2usize..=4) {
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sv = DVector::from_fn(d, |_, _| rng.random_range(1.0..2.0));
        let w1 = network::haar_orthogonal(d, &mut rng)
            * Matrix::from_diagonal(&sv)
            * network::haar_orthogonal(d, &mut rng).transpose();
        let entries: Vec<Matrix> = (0..n - 1)
            .map(|_| {
                let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-0.1..0.1));
                -(&a * a.transpose()) - 0.01 * Matrix::identity(d, d)
            })
            .collect();
        let g = network::ImbalanceG::new(entries).unwrap();
        let frames: Vec<Matrix> = (0..n - 1).map(|_| network::haar_orthogonal(d, &mut rng)).collect();
        let state = network::from_polar_params(&g, &w1, &frames).unwrap();
        prop_assert!(state.imbalance().distance(&g) <= 1e-10);
        prop_assert!((state.layer(1) - &w1).norm() == 0.0);
    }

    #[test]
    fn operator_inverse_round_trip(seed in 0u64..1_000, n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = dln::oracle::random_full_rank(3, &mut rng);
        let z = dln::oracle::random_matrix(3, 1.0, &mut rng);
        let svd = matops::svd_ordered(&w).unwrap();
        let back = flows::apply_a_inverse(&svd, &flows::apply_a(&svd, &z, n), n).unwrap();
        prop_assert!((back - &z).norm() <= 1e-10);
    }

    #[test]
    fn a_scale_is_symmetric_and_positive(sk in 0.01f64..4.0, sl in 0.01f64..4.0, n in 1usize..=10) {
        let a = flows::a_scale(sk, sl, n);
        let b = flows::a_scale(sl, sk, n);
        prop_assert!(a > 0.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn entropy_is_permutation_invariant(sigma in sigma_strategy(3), n in 2usize..=6) {
        let s0 = thermo::entropy(&sigma, n).unwrap();
        let mut perm = sigma.clone();
        perm.swap(0, 2);
        let s1 = thermo::entropy(&perm, n).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-11 * s0.abs().max(1.0));
        // Widening the top value increases the entropy.
        let mut wider = sigma.clone();
        wider[0] += 0.3;
        prop_assert!(thermo::entropy(&wider, n).unwrap() > s0);
    }

    #[test]
    fn state_json_round_trip(seed in 0u64..1_000, d in 1usize..=3, n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = network::init_random(d, n, 1.0, network::InitMode::Gaussian, &mut rng).unwrap();
        let back = NetworkState::from_json(&state.to_json().unwrap()).unwrap();
        prop_assert_eq!(state, back);
    }

    #[test]
    fn float_format_round_trips(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let parsed: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(parsed.to_bits(), x.to_bits());
    }

    #[test]
    fn effective_rank_monotone_in_threshold(sigma in sigma_strategy(4), tol_a in 1e-9f64..1e-1, tol_b in 1e-9f64..1e-1) {
        let (lo, hi) = if tol_a <= tol_b { (tol_a, tol_b) } else { (tol_b, tol_a) };
        let r_lo = dln::harness::effective_rank(&sigma, lo);
        let r_hi = dln::harness::effective_rank(&sigma, hi);
        prop_assert!(r_hi <= r_lo);
        prop_assert!(r_lo <= sigma.len());
    }

    #[test]
    fn config_toml_round_trip(seed in 0u64..10_000, d in 1usize..=4) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.d = d;
        cfg.sde.beta = if seed % 3 == 0 { f64::INFINITY } else { 1.5 };
        let cfg = cfg.resolved().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(cfg, back);
    }
}
