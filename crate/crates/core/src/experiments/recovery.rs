use serde::{Deserialize, Serialize};

use super::ProblemInstance;
use crate::solver::{solve_linear_p1, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStatus {
    Pass,
    Fail,
    /// `alpha >= 1 / beta2`: exact recovery is not predicted.
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRecoveryReport {
    pub status: RecoveryStatus,
    pub alpha: f64,
    pub beta2: f64,
    /// `||u_alpha - u†||`; `None` when the solve was skipped.
    pub error: Option<f64>,
    pub threshold: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the `p = 1` problem with noise-free data and checks
/// `||u_alpha - u†|| <= 1e-6 (1 + ||u†||)`.
pub fn exact_recovery_test(instance: &ProblemInstance, alpha: f64) -> Result<ExactRecoveryReport> {
    if instance.p != 1 {
        return Err(Error::InvalidArgument(format!(
            "exact recovery needs p = 1, instance has p = {}",
            instance.p
        )));
    }
    let beta2 = instance.certificate.beta2;
    let threshold = 1e-6 * (1.0 + instance.u_dagger.norm());
    if alpha * beta2 >= 1.0 {
        return Ok(ExactRecoveryReport {
            status: RecoveryStatus::Inapplicable,
            alpha,
            beta2,
            error: None,
            threshold,
            iterations: 0,
            converged: false,
        });
    }
    let report = solve_linear_p1(
        instance.operator.as_ref(),
        &instance.clean_data,
        &instance.spec,
        &SolverConfig::new(1, alpha),
    )?;
    let error = (&report.minimizer - &instance.u_dagger).norm();
    Ok(ExactRecoveryReport {
        status: if error <= threshold {
            RecoveryStatus::Pass
        } else {
            RecoveryStatus::Fail
        },
        alpha,
        beta2,
        error: Some(error),
        threshold,
        iterations: report.iterations,
        converged: report.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::problem_from_matrix;
    use crate::{CoefficientVector, PenaltySpec};
    use nalgebra::DMatrix;

    #[test]
    fn identity_sparse_recovery() {
        let u = CoefficientVector::from_column_slice(&[0.0, 1.2, 0.0, -0.6]);
        let inst = problem_from_matrix(DMatrix::identity(4, 4), u, PenaltySpec::uniform(1.0, 1.0, 4).unwrap(), 1)
            .unwrap();
        let r = exact_recovery_test(&inst, 0.1).unwrap();
        assert_eq!(r.status, RecoveryStatus::Pass, "{r:?}");
    }

    #[test]
    fn zero_solution_recovery() {
        let inst = problem_from_matrix(
            DMatrix::identity(3, 3),
            CoefficientVector::zeros(3),
            PenaltySpec::uniform(1.0, 1.0, 3).unwrap(),
            1,
        )
        .unwrap();
        let r = exact_recovery_test(&inst, 0.7).unwrap();
        assert_eq!(r.status, RecoveryStatus::Pass);
        assert_eq!(r.error, Some(0.0));
    }

    #[test]
    fn large_alpha_is_inapplicable() {
        let u = CoefficientVector::from_column_slice(&[1.0, 0.0]);
        let inst = problem_from_matrix(DMatrix::identity(2, 2), u, PenaltySpec::uniform(1.0, 1.0, 2).unwrap(), 1)
            .unwrap();
        assert_eq!(inst.certificate.beta2, 1.0);
        let r = exact_recovery_test(&inst, 1.0).unwrap();
        assert_eq!(r.status, RecoveryStatus::Inapplicable);
        assert!(r.error.is_none());
    }
}
