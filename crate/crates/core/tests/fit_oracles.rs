//! Fit-level oracle checks: solver roots against independent brute-force
//! searches, exact estimator equivalences, and invariance properties.

use excursion_core::data::{person_with_constant_prob, MrtDataset, Person};
use excursion_core::estimator::{
    estimating_function, fit, fit_point_estimates, EstimatorKind, EstimatorSpec, SolverConfig,
};
use excursion_core::outcomes::build_for_dataset;
use excursion_core::weights::{compute_weights, NumeratorPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn tiny_dataset() -> MrtDataset<f64> {
    // three individuals, two decision points, window length two, rational
    // randomization probabilities
    let mk = |treat: Vec<u8>, prob: f64, subs: Vec<u8>| -> Person<f64> {
        person_with_constant_prob(treat, prob, subs, &[], &[])
    };
    MrtDataset::new(
        vec![
            mk(vec![1, 0], 0.5, vec![1, 0, 1, 0]),
            mk(vec![0, 1], 0.25, vec![0, 1, 0, 0]),
            mk(vec![0, 0], 0.5, vec![1, 1, 0, 0]),
        ],
        2,
        1,
        1,
    )
    .unwrap()
}

#[test]
fn tiny_dataset_root_matches_grid_bisection_oracle() {
    let data = tiny_dataset();
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::EmpiricalMean,
    );
    let (alpha_hat, beta_hat) = fit_point_estimates(&data, &out, &spec).unwrap();

    let w = compute_weights(&data, &out, &spec.numerator, 1).unwrap();
    let u = |al: f64, be: f64| -> Vec<f64> {
        estimating_function(&data, &out, &w, &spec, &[al], &[be]).unwrap()
    };
    // the control equation is strictly decreasing in alpha
    let solve_alpha = |be: f64| -> f64 {
        let (mut lo, mut hi) = (-25.0, 25.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if u(mid, be)[0] > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let profile = |be: f64| u(solve_alpha(be), be)[1];
    // grid scan for a sign change, then bisect
    let grid: Vec<f64> = (-40..=40).map(|i| f64::from(i) * 0.25).collect();
    let mut bracket = None;
    for pair in grid.windows(2) {
        if profile(pair[0]) * profile(pair[1]) <= 0.0 {
            bracket = Some((pair[0], pair[1]));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.expect("profile must change sign on the grid");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if profile(lo) * profile(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let beta_oracle = 0.5 * (lo + hi);
    assert!(
        (beta_hat[0] - beta_oracle).abs() < 1e-6,
        "solver {} vs oracle {beta_oracle}",
        beta_hat[0]
    );
    // the solver root also zeroes the equation evaluated independently
    let at_root = u(alpha_hat[0], beta_hat[0]);
    assert!(at_root.iter().all(|v| v.abs() <= 1e-10));
}

fn random_dataset(rng: &mut ChaCha12Rng, n: usize, t_len: usize, delta: usize) -> MrtDataset<f64> {
    let persons: Vec<Person<f64>> = (0..n)
        .map(|_| {
            let treat: Vec<u8> = (0..t_len)
                .map(|_| u8::from(rng.gen::<f64>() < 0.4))
                .collect();
            let subs: Vec<u8> = (0..t_len + delta)
                .map(|_| u8::from(rng.gen::<f64>() < 0.5))
                .collect();
            person_with_constant_prob(treat, 0.4, subs, &[], &[])
        })
        .collect();
    MrtDataset::new(persons, delta, 1, 1).unwrap()
}

#[test]
fn delta_one_estimators_coincide_exactly() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..10 {
        let data = random_dataset(&mut rng, 12, 6, 1);
        let out = build_for_dataset(&data).unwrap();
        let pd = EstimatorSpec::marginal(
            EstimatorKind::PdEmee,
            vec![0],
            NumeratorPolicy::Constant(0.4),
        );
        let emee =
            EstimatorSpec::marginal(EstimatorKind::Emee, vec![0], NumeratorPolicy::Constant(0.4));
        let (a1, b1) = fit_point_estimates(&data, &out, &pd).unwrap();
        let (a2, b2) = fit_point_estimates(&data, &out, &emee).unwrap();
        assert_eq!(b1, b2, "identical estimating functions at delta = 1");
        assert_eq!(a1, a2);
    }
}

#[test]
fn reference_regime_extremes_match_named_estimators() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let data = random_dataset(&mut rng, 15, 8, 3);
    let out = build_for_dataset(&data).unwrap();
    let numerator = NumeratorPolicy::Constant(0.4);
    let pd = EstimatorSpec::marginal(EstimatorKind::PdEmee, vec![0], numerator.clone());
    let k_max = EstimatorSpec::marginal(EstimatorKind::RefRegimeK(2), vec![0], numerator.clone());
    let (_, b_pd) = fit_point_estimates(&data, &out, &pd).unwrap();
    let (_, b_k) = fit_point_estimates(&data, &out, &k_max).unwrap();
    assert_eq!(b_pd, b_k, "K = delta - 1 is the per-decision estimator");

    let k0 = EstimatorSpec::marginal(EstimatorKind::RefRegimeK(0), vec![0], numerator.clone());
    let k0_full =
        EstimatorSpec::marginal(EstimatorKind::RefRegimeKEmee(0), vec![0], numerator.clone());
    let (_, b_k0) = fit_point_estimates(&data, &out, &k0).unwrap();
    let (_, b_k0f) = fit_point_estimates(&data, &out, &k0_full).unwrap();
    assert_eq!(b_k0, b_k0f, "K = 0 zeroes out all window factors");
}

#[test]
fn permuting_individuals_leaves_fit_unchanged() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let data = random_dataset(&mut rng, 20, 5, 2);
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.4),
    );
    let base = fit(&data, &out, &spec).unwrap();

    let order: Vec<usize> = (0..20).rev().collect();
    let permuted = data.permuted(&order).unwrap();
    let out_p = build_for_dataset(&permuted).unwrap();
    let other = fit(&permuted, &out_p, &spec).unwrap();
    for (a, b) in base.beta.iter().zip(&other.beta) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in base.se_beta.iter().zip(&other.se_beta) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn perturbed_initialization_reaches_the_same_root() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let data = random_dataset(&mut rng, 25, 6, 2);
    let out = build_for_dataset(&data).unwrap();
    let mut spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.4),
    );
    let (_, base) = fit_point_estimates(&data, &out, &spec).unwrap();
    for init in [vec![0.5, -0.5], vec![-1.0, 1.0], vec![0.2, 0.7]] {
        spec.solver = SolverConfig {
            init: Some(init),
            ..SolverConfig::default()
        };
        let (_, restarted) = fit_point_estimates(&data, &out, &spec).unwrap();
        assert!(
            (restarted[0] - base[0]).abs() < 1e-8,
            "restart found a different root: {} vs {}",
            restarted[0],
            base[0]
        );
    }
}

#[test]
fn duplicated_individual_has_degenerate_sandwich() {
    // k copies of one individual: the root solves that single profile
    // exactly, every per-individual score vanishes, and the covariance
    // collapses to zero
    let one = person_with_constant_prob(vec![1, 0, 0, 1], 0.5, vec![1, 0, 1, 0, 0, 1], &[], &[]);
    let data = MrtDataset::new(vec![one; 5], 2, 1, 1).unwrap();
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.5),
    );
    let result = fit(&data, &out, &spec).unwrap();
    assert!(result.vcov_unadjusted.max_abs() < 1e-18);
    assert!(result.se_beta_unadjusted[0] < 1e-9);
}

#[test]
fn fit_covariance_is_symmetric_psd_and_cis_contain_estimates() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let data = random_dataset(&mut rng, 40, 8, 2);
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.4),
    );
    let result = fit(&data, &out, &spec).unwrap();
    for vcov in [&result.vcov, &result.vcov_unadjusted] {
        assert!(vcov.is_symmetric(1e-12));
        let min_ev = vcov
            .sym_eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(min_ev >= -1e-8, "smallest eigenvalue {min_ev}");
    }
    for (j, &(lo, hi)) in result.ci_beta.iter().enumerate() {
        assert!(lo <= result.beta[j] && result.beta[j] <= hi);
    }
}

#[test]
fn exhausted_iterations_report_nonconvergence_with_last_iterate() {
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    let data = random_dataset(&mut rng, 20, 6, 2);
    let out = build_for_dataset(&data).unwrap();
    let mut spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.4),
    );
    spec.solver.max_iter = 1;
    spec.solver.tol = 1e-14;
    match fit(&data, &out, &spec) {
        Err(excursion_core::Error::NonConvergence {
            iterations,
            residual,
            last_iterate,
        }) => {
            assert_eq!(iterations, 1);
            assert!(residual > 0.0);
            assert_eq!(last_iterate.len(), 2);
        }
        other => panic!("expected NonConvergence, got {other:?}"),
    }
}

#[test]
fn all_zero_outcomes_make_the_jacobian_singular() {
    let persons: Vec<Person<f64>> = (0..10)
        .map(|i| {
            person_with_constant_prob(vec![u8::from(i % 2 == 0), 0, 1], 0.4, vec![0; 5], &[], &[])
        })
        .collect();
    let data = MrtDataset::new(persons, 2, 1, 1).unwrap();
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::Constant(0.4),
    );
    assert!(matches!(
        fit(&data, &out, &spec),
        Err(excursion_core::Error::SingularJacobian(_))
    ));
}

#[test]
fn non_finite_parameters_name_the_offending_point() {
    let data = tiny_dataset();
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::marginal(
        EstimatorKind::PdEmee,
        vec![0],
        NumeratorPolicy::EmpiricalMean,
    );
    let w = compute_weights(&data, &out, &spec.numerator, 1).unwrap();
    match estimating_function(&data, &out, &w, &spec, &[f64::NAN], &[0.0]) {
        Err(excursion_core::Error::NonFinite { individual, .. }) => assert_eq!(individual, 0),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn single_precision_stack_runs_end_to_end() {
    let persons: Vec<Person<f32>> = (0..30)
        .map(|i| {
            person_with_constant_prob(
                vec![u8::from(i % 2 == 0), 0, 1, 0],
                0.4_f32,
                vec![0, u8::from(i % 3 == 0), 1, 0, 0, u8::from(i % 5 == 0)],
                &[],
                &[],
            )
        })
        .collect();
    let data = MrtDataset::<f32>::new(persons, 2, 1, 1).unwrap();
    let out = build_for_dataset(&data).unwrap();
    let spec = EstimatorSpec::<f32> {
        kind: EstimatorKind::PdEmee,
        moderator_cols: vec![0],
        control_cols: vec![0],
        numerator: NumeratorPolicy::Constant(0.4),
        solver: SolverConfig {
            tol: 1e-5,
            ..SolverConfig::default()
        },
    };
    let result = fit(&data, &out, &spec).unwrap();
    assert!(result.diagnostics.converged);
    assert!(result.se_beta[0] > 0.0);
}
