//! Minimizers of the Tikhonov functional `||F(u) - v||^p + alpha R_q(u)` for
//! `p in {1, 2}`.

mod fista;
mod gauss_newton;
mod primal_dual;

use serde::{Deserialize, Serialize};

pub use fista::solve_linear_p2;
pub use gauss_newton::solve_nonlinear;
pub use primal_dual::solve_linear_p1;

use crate::operators::ForwardOperator;
use crate::penalty::{eval_rq, PenaltySpec};
use crate::{all_finite, CoefficientVector, DataVector, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Data exponent, 1 or 2.
    pub p: u32,
    pub alpha: f64,
    pub max_iter: usize,
    /// Relative iterate change at which the iteration stops.
    pub tol: f64,
    /// Iteration cap of the linearized subproblems (nonlinear path).
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    /// Fraction of the largest stable step size, in `(0, 1]`.
    pub step_safety: f64,
}

impl SolverConfig {
    pub fn new(p: u32, alpha: f64) -> Self {
        Self {
            p,
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidArgument(format!("p = {} not in {{1, 2}}", self.p)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive".into()));
        }
        if !(self.step_safety > 0.0 && self.step_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step_safety = {} outside (0, 1]",
                self.step_safety
            )));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 2,
            alpha: 1.0,
            max_iter: 50_000,
            tol: 1e-10,
            inner_max_iter: 20_000,
            inner_tol: 1e-12,
            step_safety: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub minimizer: CoefficientVector,
    pub objective: f64,
    /// `||F(u) - v||` at the minimizer.
    pub residual_norm: f64,
    pub penalty_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// Length of the last iterate update; an estimate of the remaining
    /// optimization error.
    pub final_step: f64,
}

impl SolveReport {
    pub(crate) fn at(
        op: &dyn ForwardOperator,
        data: &DataVector,
        spec: &PenaltySpec,
        cfg: &SolverConfig,
        minimizer: CoefficientVector,
    ) -> Result<Self> {
        let residual_norm = (op.apply(&minimizer)? - data).norm();
        let penalty_value = eval_rq(&minimizer, spec);
        Ok(Self {
            objective: residual_norm.powi(cfg.p as i32) + cfg.alpha * penalty_value,
            residual_norm,
            penalty_value,
            minimizer,
            iterations: 0,
            converged: false,
            objective_trace: Vec::new(),
            final_step: f64::NAN,
        })
    }
}

/// `||F(u) - v||^p + alpha R_q(u)`.
pub fn tikhonov_objective(
    op: &dyn ForwardOperator,
    data: &DataVector,
    spec: &PenaltySpec,
    p: u32,
    alpha: f64,
    u: &CoefficientVector,
) -> Result<f64> {
    let r = (op.apply(u)? - data).norm();
    Ok(r.powi(p as i32) + alpha * eval_rq(u, spec))
}

/// Dispatches on `cfg.p` and the linearity of `op`. `u0` is the starting
/// point of the nonlinear path (zero when absent).
pub fn solve(
    op: &dyn ForwardOperator,
    data: &DataVector,
    spec: &PenaltySpec,
    cfg: &SolverConfig,
    u0: Option<&CoefficientVector>,
) -> Result<SolveReport> {
    match (cfg.p, op.is_linear()) {
        (2, true) => solve_linear_p2(op, data, spec, cfg),
        (1, true) => solve_linear_p1(op, data, spec, cfg),
        (2, false) => {
            let zero = CoefficientVector::zeros(op.input_dim());
            solve_nonlinear(op, data, spec, cfg, u0.unwrap_or(&zero))
        }
        (1, false) => Err(Error::InvalidArgument(
            "the nonlinear path supports p = 2 only".into(),
        )),
        (p, _) => Err(Error::InvalidArgument(format!("p = {p} not in {{1, 2}}"))),
    }
}

pub(crate) fn validate_problem(
    op: &dyn ForwardOperator,
    data: &DataVector,
    spec: &PenaltySpec,
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    if data.len() != op.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.output_dim(),
            actual: data.len(),
        });
    }
    if spec.len() != op.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.input_dim(),
            actual: spec.len(),
        });
    }
    if !all_finite(data) {
        return Err(Error::NonFinite("data"));
    }
    Ok(())
}

pub(crate) fn converged(step: f64, iterate: &CoefficientVector, tol: f64) -> bool {
    step <= tol * iterate.norm().max(1.0)
}
