use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparsereg::analysis::*;
use sparsereg::experiments::{generate_problem, make_diagonal_problem, ProblemKind, ProblemSpec};
use sparsereg::operators::{derivative_matrix, make_dense_linear, make_diagonal_linear};
use sparsereg::{CoefficientVector, PenaltySpec};

fn gaussian_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn sparse_vector(rng: &mut ChaCha8Rng, n: usize, support: &[usize]) -> CoefficientVector {
    let mut u = CoefficientVector::zeros(n);
    for &i in support {
        u[i] = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    u
}

#[test]
fn fbi_matches_eigenvalue_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let k = gaussian_mat(&mut rng, 32, 64);
        let mut idx: Vec<usize> = (0..64).collect();
        for i in 0..5 {
            let j = rng.random_range(i..64);
            idx.swap(i, j);
        }
        let mut supp = idx[..5].to_vec();
        supp.sort_unstable();
        let u = sparse_vector(&mut rng, 64, &supp);
        let op = make_dense_linear(k.clone()).unwrap();
        let report = fbi_check(&op, &u).unwrap();
        assert_eq!(report.support, supp);

        // independent route: eigenvalues of the Gram matrix
        let kj = k.select_columns(supp.iter());
        let gram = kj.transpose() * &kj;
        let oracle = SymmetricEigen::new(gram).eigenvalues.min().sqrt();
        assert!(report.injective);
        assert!((report.sigma_min - oracle).abs() < 1e-8, "{} vs {oracle}", report.sigma_min);
        assert!((report.injectivity_constant * oracle - 1.0).abs() < 1e-8);
    }
}

#[test]
fn fbi_diagonal_and_identity() {
    let d = make_diagonal_linear(vec![1.0, 0.5, 0.25]).unwrap();
    let r = fbi_check(&d, &CoefficientVector::from_column_slice(&[1.0, 0.0, -2.0])).unwrap();
    assert_eq!(r.support, vec![0, 2]);
    assert!((r.sigma_min - 0.25).abs() < 1e-15);

    let id = make_dense_linear(DMatrix::identity(6, 6)).unwrap();
    let r = fbi_check(&id, &CoefficientVector::from_column_slice(&[0.0, 3.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
    assert!((r.sigma_min - 1.0).abs() < 1e-15);

    let r = fbi_check(&id, &CoefficientVector::zeros(6)).unwrap();
    assert!(r.empty_support && r.injective && r.sigma_min.is_infinite());
}

#[test]
fn dependent_support_columns_fail_fbi() {
    let k = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
    let op = make_dense_linear(k).unwrap();
    let u = CoefficientVector::from_column_slice(&[1.0, 1.0, 0.0]);
    let spec = PenaltySpec::uniform(1.0, 1.0, 3).unwrap();
    let report = check_sparse_rate_conditions(&op, &u, &spec).unwrap();
    assert!(!report.fbi.injective);
    assert!(report.fbi.sigma_min < 1e-12);
    assert!(!report.passed);
    assert!(report.failures.iter().any(|f| f.contains("injectivity")));
}

#[test]
fn certificate_round_trip_smooth() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = gaussian_mat(&mut rng, 40, 30) / 40f64.sqrt();
    let op = make_dense_linear(k.clone()).unwrap();
    let u = sparse_vector(&mut rng, 30, &[2, 7, 19]);
    for q in [1.25, 1.5, 2.0] {
        let spec = PenaltySpec::uniform(q, 1.0, 30).unwrap();
        let cert = check_source_condition(&op, &u, &spec).unwrap();
        assert!(cert.residual <= 1e-8 * (1.0 + cert.xi.norm()));
        for _ in 0..1000 {
            let h = CoefficientVector::from_fn(30, |_, _| rng.sample(StandardNormal));
            let lhs = cert.xi.dot(&h).abs();
            let rhs = cert.beta2 * (&k * &h).norm() + cert.residual * h.norm();
            assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "q = {q}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn certificate_round_trip_l1() {
    let inst = make_diagonal_problem(64, 3, 1.0, 1, 7).unwrap();
    let cert = &inst.certificate;
    let k = derivative_matrix(inst.operator.as_ref(), &inst.u_dagger).unwrap();
    let w = inst.spec.weights();
    for ((&u, &xi), &wi) in inst.u_dagger.iter().zip(cert.xi.iter()).zip(w) {
        if u != 0.0 {
            assert!((xi - wi * u.signum()).abs() < 1e-12);
        } else {
            assert!(xi.abs() <= wi);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let h = CoefficientVector::from_fn(64, |_, _| rng.sample(StandardNormal));
        let lhs = cert.xi.dot(&h).abs();
        let rhs = cert.beta2 * (&k * &h).norm() + cert.residual * h.norm();
        assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }
}

#[test]
fn diagonal_instances_validate_on_samples() {
    for (q, p) in [(1.0, 1), (1.0, 2), (1.5, 2), (2.0, 2)] {
        let inst = make_diagonal_problem(64, 3, q, p, 7).unwrap();
        let report = estimate_rate_constants(
            inst.operator.as_ref(),
            &inst.u_dagger,
            &inst.spec,
            default_rate_exponent(q),
            1000,
            0.1,
            3,
        )
        .unwrap();
        let v = &report.validation;
        assert!(v.passed, "q = {q}: {} violations, min slack {}", v.violations.len(), v.min_slack);
        assert!(v.in_region > 0);
        assert!(report.constants.beta1 > 0.0 && report.constants.beta2 > 0.0);
        assert!((report.certificate_beta2 - inst.certificate.beta2).abs() < 1e-12);
    }
}

#[test]
fn inflated_beta1_is_detected() {
    let op = make_dense_linear(DMatrix::identity(8, 8)).unwrap();
    let u = CoefficientVector::zeros(8);
    let spec = PenaltySpec::uniform(2.0, 1.0, 8).unwrap();
    let certified = estimate_rate_constants(&op, &u, &spec, 2.0, 1000, 0.1, 0).unwrap();
    assert!(certified.validation.passed);
    let mut inflated = certified.constants;
    inflated.beta1 *= 10.0;
    let v = validate_rate_constants(&op, &u, &spec, &inflated, 1000, 0.1, 0).unwrap();
    assert!(!v.passed);
    assert!(!v.violations.is_empty());
    assert!(v.min_slack < 0.0);
}

#[test]
fn toy_nonlinear_sampled_conditions() {
    let mut spec = ProblemSpec::new(ProblemKind::ToyNonlinear, 32, 3, 1.5, 2, 5);
    spec.epsilon = 1e-3;
    let inst = generate_problem(&spec).unwrap();
    assert!(!inst.operator.is_linear());
    let report = check_sparse_rate_conditions(inst.operator.as_ref(), &inst.u_dagger, &inst.spec).unwrap();
    let sampled = report.sampled.expect("nonlinear operators are sampled");
    assert!(sampled.passed);
    assert!(sampled.gamma1.is_finite() && sampled.gamma2.is_finite());
    assert!(sampled.in_region > 0);
    assert!(report.passed, "{:?}", report.failures);
}

#[test]
fn bound_is_monotone() {
    let c = RateConstants {
        beta1: 0.3,
        beta2: 1.7,
        r: 1.5,
        rho: 10.0,
        sigma: 1.0,
        route: RateRoute::SparseQ,
    };
    let deltas: Vec<f64> = (0..40).map(|k| 1e-6 * 1.5f64.powi(k)).collect();
    for p in [1, 2] {
        let alpha = 0.1;
        let mut last = theoretical_bound(&c, p, alpha, 0.0).unwrap();
        for &d in &deltas {
            let b = theoretical_bound(&c, p, alpha, d).unwrap();
            assert!(b.err_bound >= last.err_bound && b.residual_bound >= last.residual_bound);
            last = b;
        }
    }
    // p = 1: nondecreasing in 1 / alpha
    let mut last = 0.0;
    for k in 0..30 {
        let alpha = 0.5 / 1.7 * 0.8f64.powi(k);
        let b = theoretical_bound(&c, 1, alpha, 0.01).unwrap();
        assert!(b.err_bound >= last);
        last = b.err_bound;
    }
}

#[test]
fn bound_examples() {
    let unit = |r| RateConstants {
        beta1: 1.0,
        beta2: 1.0,
        r,
        rho: 1.0,
        sigma: 1.0,
        route: RateRoute::SparseOne,
    };
    let b = theoretical_bound(&unit(1.0), 1, 0.5, 0.1).unwrap();
    assert!((b.err_bound - 0.3).abs() < 1e-15);
    let b = theoretical_bound(&unit(1.0), 1, 0.5, 0.0).unwrap();
    assert_eq!((b.err_bound, b.residual_bound), (0.0, 0.0));
    for r in [1.0, 1.5, 2.0] {
        let d = 0.04;
        let b = theoretical_bound(&unit(r), 2, d, d).unwrap();
        assert!((b.err_bound - (2.5 * d).powf(1.0 / r)).abs() < 1e-14);
    }
    assert!(theoretical_bound(&unit(1.0), 1, 1.0, 0.1).is_err());
}

#[test]
fn reports_serialize_to_json() {
    let inst = make_diagonal_problem(16, 2, 1.0, 1, 1).unwrap();
    let report = check_sparse_rate_conditions(inst.operator.as_ref(), &inst.u_dagger, &inst.spec).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["passed"], serde_json::Value::Bool(report.passed));
    assert!(json["l1_certificate"]["gamma3"].as_f64().unwrap() == 0.5);
}
