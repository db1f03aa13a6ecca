use super::{converged, validate_problem, SolveReport, SolverConfig};
use crate::operators::{operator_norm_sq, ForwardOperator};
use crate::penalty::{eval_rq, prox_rq, PenaltySpec};
use crate::{CoefficientVector, DataVector, Error, Result};

/// Minimizes `||K u - v|| + alpha R_q(u)` for linear `K` with the first-order
/// primal-dual iteration
///
/// ```text
/// y <- P_ball(y + sigma (K u_bar - v))
/// u' <- prox_{tau alpha R_q}(u - tau K^* y)
/// u_bar <- 2 u' - u
/// ```
///
/// where `P_ball` projects onto the unit ball of the data space (the prox of
/// the conjugate of `||. - v||`), and `sigma = tau = safety / ||K||`.
pub fn solve_linear_p1(
    op: &dyn ForwardOperator,
    data: &DataVector,
    spec: &PenaltySpec,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if cfg.p != 1 {
        return Err(Error::InvalidArgument(format!(
            "solve_linear_p1 called with p = {}",
            cfg.p
        )));
    }
    if !op.is_linear() {
        return Err(Error::NotLinear);
    }
    validate_problem(op, data, spec, cfg)?;

    let n = op.input_dim();
    let zero = CoefficientVector::zeros(n);
    let norm_sq = operator_norm_sq(op, &zero)?;
    if norm_sq == 0.0 {
        let mut report = SolveReport::at(op, data, spec, cfg, zero)?;
        report.converged = true;
        report.final_step = 0.0;
        return Ok(report);
    }
    let tau = cfg.step_safety / norm_sq.sqrt();
    let sigma = tau;
    let alpha = cfg.alpha;

    let mut u = zero.clone();
    let mut ku = op.apply(&u)?;
    let mut ku_bar = ku.clone();
    let mut y = DataVector::zeros(op.output_dim());
    let mut trace = vec![(&ku - data).norm() + alpha * eval_rq(&u, spec)];
    let mut final_step = f64::INFINITY;
    let mut done = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut y_next = &y + (&ku_bar - data) * sigma;
        let norm = y_next.norm();
        if norm > 1.0 {
            y_next /= norm;
        }
        let u_next = prox_rq(
            &(&u - op.derivative_adjoint_apply(&zero, &y_next)? * tau),
            tau * alpha,
            spec,
        );
        let ku_next = op.apply(&u_next)?;
        ku_bar = &ku_next * 2.0 - &ku;

        let du = (&u_next - &u).norm();
        let dy = (&y_next - &y).norm();
        final_step = du;
        let stop = converged(du, &u_next, cfg.tol) && dy <= cfg.tol * y_next.norm().max(1.0);

        u = u_next;
        ku = ku_next;
        y = y_next;
        trace.push((&ku - data).norm() + alpha * eval_rq(&u, spec));
        if stop {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_dense_linear, make_diagonal_linear};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn scalar_exact_fit() {
        // |x - 2| + 0.5 |x| is minimized at x = 2
        let op = make_dense_linear(DMatrix::identity(1, 1)).unwrap();
        let spec = PenaltySpec::uniform(1.0, 1.0, 1).unwrap();
        let data = DataVector::from_element(1, 2.0);
        let r = solve_linear_p1(&op, &data, &spec, &SolverConfig::new(1, 0.5)).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.minimizer[0], 2.0, epsilon = 1e-8);

        let grid_best = (0..=40_000)
            .map(|k| -1.0 + 4.0 * k as f64 / 40_000.0)
            .min_by(|a, b| {
                let f = |x: f64| (x - 2.0).abs() + 0.5 * x.abs();
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        assert_relative_eq!(r.minimizer[0], grid_best, epsilon = 1e-4);
    }

    #[test]
    fn zero_data() {
        let op = make_diagonal_linear(vec![1.0, 0.5, 0.2]).unwrap();
        let spec = PenaltySpec::uniform(1.0, 1.0, 3).unwrap();
        let r = solve_linear_p1(&op, &DataVector::zeros(3), &spec, &SolverConfig::new(1, 0.3)).unwrap();
        assert!(r.converged);
        assert!(r.minimizer.norm() < 1e-12);
    }

    #[test]
    fn objective_matches_report_fields() {
        let op = make_diagonal_linear(vec![1.0, 0.5]).unwrap();
        let spec = PenaltySpec::uniform(1.5, 1.0, 2).unwrap();
        let data = DataVector::from_column_slice(&[1.0, -0.4]);
        let r = solve_linear_p1(&op, &data, &spec, &SolverConfig::new(1, 0.2)).unwrap();
        assert_relative_eq!(r.objective, r.residual_norm + 0.2 * r.penalty_value, max_relative = 1e-12);
    }
}
