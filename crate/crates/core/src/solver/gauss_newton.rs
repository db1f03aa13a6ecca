use super::fista;
use super::{converged, tikhonov_objective, validate_problem, SolveReport, SolverConfig};
use crate::operators::{ForwardOperator, Linearization};
use crate::penalty::PenaltySpec;
use crate::{CoefficientVector, DataVector, Error, Result};

const MAX_HALVINGS: usize = 20;

/// Gauss-Newton type outer loop for `||F(u) - v||^2 + alpha R_q(u)`.
///
/// Each outer step linearizes `F` at `u_k` and solves
/// `min_x ||F'(u_k) x - (v - F(u_k) + F'(u_k) u_k)||^2 + alpha R_q(x)` with the
/// `p = 2` solver (the substitution `x = u_k + h`), then moves towards `x`,
/// halving the step while the true objective increases.
pub fn solve_nonlinear(
    op: &dyn ForwardOperator,
    data: &DataVector,
    spec: &PenaltySpec,
    cfg: &SolverConfig,
    u0: &CoefficientVector,
) -> Result<SolveReport> {
    if cfg.p != 2 {
        return Err(Error::InvalidArgument(
            "the nonlinear path supports p = 2 only".into(),
        ));
    }
    validate_problem(op, data, spec, cfg)?;
    if u0.len() != op.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.input_dim(),
            actual: u0.len(),
        });
    }

    let objective = |u: &CoefficientVector| tikhonov_objective(op, data, spec, 2, cfg.alpha, u);
    let mut u = u0.clone();
    let mut obj = objective(&u)?;
    let mut trace = vec![obj];
    let mut final_step = f64::INFINITY;
    let mut done = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let lin = Linearization::new(op, u.clone())?;
        let target = data - op.apply(&u)? + lin.apply(&u)?;
        let inner = fista::minimize(
            &lin,
            &target,
            spec,
            cfg.alpha,
            &u,
            cfg.inner_max_iter,
            cfg.inner_tol,
            cfg.step_safety,
        )?;
        let direction = inner.minimizer - &u;

        let mut scale = 1.0;
        let mut candidate = &u + &direction;
        let mut cand_obj = objective(&candidate)?;
        let mut halvings = 0;
        while cand_obj > obj && halvings < MAX_HALVINGS {
            scale *= 0.5;
            candidate = &u + &direction * scale;
            cand_obj = objective(&candidate)?;
            halvings += 1;
        }
        if cand_obj > obj {
            // no descent along the Gauss-Newton direction at any tried step
            final_step = 0.0;
            done = converged(direction.norm(), &u, cfg.tol.sqrt());
            break;
        }

        final_step = (&candidate - &u).norm();
        u = candidate;
        obj = cand_obj;
        trace.push(obj);
        if converged(final_step, &u, cfg.tol) {
            done = true;
            break;
        }
    }

    let mut report = SolveReport::at(op, data, spec, cfg, u)?;
    report.iterations = iterations;
    report.converged = done;
    report.objective_trace = trace;
    report.final_step = final_step;
    Ok(report)
}
