use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sparsereg::analysis::{
    check_sparse_rate_conditions_with, default_rate_exponent, estimate_rate_constants, RateConstantsReport,
    SparseRateReport,
};
use sparsereg::experiments::{
    add_noise, alpha_rule, draw_unchecked, generate_problem, generate_source_problem, run_sweep_with,
    DeltaSummary, ProblemInstance, RateEstimate,
};
use sparsereg::solver::{solve as solve_problem, SolveReport};
use sparsereg::{CoefficientVector, Error, ForwardOperator};

use crate::config::ExperimentConfig;
use crate::output::{rate_svg, write_atomic, write_json};
use crate::CliError;

fn instance(cfg: &ExperimentConfig) -> Result<ProblemInstance, CliError> {
    let spec = cfg.problem_spec()?;
    let inst = if cfg.problem.source_condition {
        generate_source_problem(&spec)?
    } else {
        generate_problem(&spec)?
    };
    Ok(inst)
}

#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub delta: f64,
    pub alpha: f64,
    pub p: u32,
    pub q: f64,
    #[serde(flatten)]
    pub report: SolveReport,
    /// `||u_alpha^delta - u†||`.
    pub error_norm: f64,
    pub max_coefficient_error: f64,
    pub certificate_beta2: f64,
    /// `(1 + alpha beta2) delta / (1 - alpha beta2)` for `p = 1`, `alpha beta2 < 1`.
    pub residual_bound: Option<f64>,
}

pub fn solve(cfg: &ExperimentConfig, out: &Path, delta: Option<f64>) -> Result<String, CliError> {
    let delta = delta.unwrap_or(cfg.solve.delta);
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(CliError::Config(format!("--delta {delta} must be nonnegative")));
    }
    let p = cfg.problem.p;
    let alpha = match cfg.solve.alpha {
        Some(a) => a,
        None if p == 2 && delta == 0.0 => {
            return Err(CliError::Config("solve.alpha: required when delta = 0 and p = 2".into()))
        }
        None => alpha_rule(delta, p, cfg.sweep.c_alpha),
    };
    let inst = instance(cfg)?;
    let noise_seed = cfg.sweep.seed.unwrap_or(cfg.problem.seed);
    let data = add_noise(&inst.clean_data, delta, noise_seed)?;
    let report = solve_problem(inst.operator.as_ref(), &data, &inst.spec, &cfg.solver_config(alpha), None)?;

    let diff = &report.minimizer - &inst.u_dagger;
    let beta2 = inst.certificate.beta2;
    let ab = alpha * beta2;
    let output = SolveOutput {
        delta,
        alpha,
        p,
        q: inst.spec.q(),
        error_norm: diff.norm(),
        max_coefficient_error: diff.amax(),
        certificate_beta2: beta2,
        residual_bound: (p == 1 && ab < 1.0).then(|| (1.0 + ab) * delta / (1.0 - ab)),
        report,
    };

    let mut csv = String::from("index,u_dagger,u_alpha\n");
    for (i, (a, b)) in inst.u_dagger.iter().zip(output.report.minimizer.iter()).enumerate() {
        let _ = writeln!(csv, "{i},{a},{b}");
    }
    write_atomic(&out.join("solution.csv"), csv.as_bytes())?;
    write_json(&out.join("report.json"), &output)?;

    let summary = format!(
        "solve: delta = {delta}, alpha = {alpha}, error = {:.3e}, residual = {:.3e}, {} iterations",
        output.error_norm, output.report.residual_norm, output.report.iterations
    );
    if output.report.converged {
        Ok(summary)
    } else {
        Err(CliError::Numerical(format!("solver did not converge ({summary})")))
    }
}

#[derive(Debug, Serialize)]
pub struct RateOutput {
    pub q: f64,
    pub p: u32,
    /// Predicted slope: `1 / q` for sparse solutions, `1 / 2` under the range condition.
    pub reference_slope: f64,
    pub rate: Option<RateEstimate>,
    pub rate_failure: Option<String>,
    pub per_delta: Vec<DeltaSummary>,
    pub bound_violations: usize,
    pub constants: Option<RateConstantsReport>,
    pub constants_failure: Option<String>,
    pub conditions: SparseRateReport,
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let inst = instance(cfg)?;
    let opts = cfg.sweep_options()?;
    let result = run_sweep_with(&inst, &opts)?;
    let conditions = check_sparse_rate_conditions_with(
        inst.operator.as_ref(),
        &inst.u_dagger,
        &inst.spec,
        &cfg.sampling(),
    )?;
    let q = inst.spec.q();
    // the range condition alone predicts sqrt(delta); sparsity predicts delta^(1/q)
    let reference_slope = if cfg.problem.source_condition {
        0.5
    } else {
        1.0 / default_rate_exponent(q)
    };

    write_atomic(&out.join("sweep.csv"), result.to_csv_string().as_bytes())?;
    let points: Vec<(f64, f64)> = result
        .per_delta
        .iter()
        .filter(|d| d.valid)
        .map(|d| (d.delta, d.mean_error))
        .collect();
    let svg = rate_svg(&points, result.rate.map(|r| (r.slope, r.intercept)), reference_slope);
    write_atomic(&out.join("rate.svg"), svg.as_bytes())?;
    let output = RateOutput {
        q,
        p: inst.p,
        reference_slope,
        rate: result.rate,
        rate_failure: result.rate_failure.clone(),
        per_delta: result.per_delta.clone(),
        bound_violations: result.bound_violations,
        constants: result.constants.clone(),
        constants_failure: result.constants_failure.clone(),
        conditions,
    };
    write_json(&out.join("rate.json"), &output)?;

    match result.rate {
        Some(r) => Ok(format!(
            "sweep: slope = {:.4} (reference {reference_slope:.4}), r^2 = {:.4}, {} points, {} bound violations",
            r.slope, r.r_squared, r.n_points, result.bound_violations
        )),
        None => Err(CliError::Numerical(format!(
            "sweep: no rate fit: {}",
            result.rate_failure.unwrap_or_default()
        ))),
    }
}

#[derive(Debug, Serialize)]
pub struct CheckOutput {
    /// Seed of the examined draw.
    pub seed: u64,
    pub generated: bool,
    pub generation_failure: Option<String>,
    pub conditions: SparseRateReport,
    pub rate_constants: Option<RateConstantsReport>,
    pub rate_constants_failure: Option<String>,
    pub passed: bool,
}

pub fn check(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.problem_spec()?;
    let generated = if cfg.problem.source_condition {
        generate_source_problem(&spec)
    } else {
        generate_problem(&spec)
    };
    let (operator, u_dagger, seed, generation_failure): (
        std::sync::Arc<dyn ForwardOperator>,
        CoefficientVector,
        u64,
        Option<String>,
    ) = match generated {
        Ok(inst) => (inst.operator, inst.u_dagger, inst.seed, None),
        Err(
            e @ (Error::GenerationFailed { .. }
            | Error::SourceConditionViolated { .. }
            | Error::InvalidSubgradient(_)
            | Error::BoundInapplicable(_)),
        ) => {
            // report on the first draw to show which condition fails
            let (op, u) = draw_unchecked(&spec, 0)?;
            (op, u, spec.seed, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let penalty = spec.penalty()?;
    let conditions =
        check_sparse_rate_conditions_with(operator.as_ref(), &u_dagger, &penalty, &cfg.sampling())?;

    let (rate_constants, rate_constants_failure) = if !operator.is_linear() {
        (None, None)
    } else if !conditions.fbi.injective || conditions.source.is_none() {
        (None, Some("skipped: the source condition or injectivity fails".to_string()))
    } else {
        match estimate_rate_constants(
            operator.as_ref(),
            &u_dagger,
            &penalty,
            default_rate_exponent(penalty.q()),
            cfg.check.samples,
            cfg.check.radius,
            cfg.problem.seed,
        ) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let constants_ok = !operator.is_linear() || rate_constants.as_ref().is_some_and(|r| r.validation.passed);
    let passed = conditions.passed && constants_ok;
    let output = CheckOutput {
        seed,
        generated: generation_failure.is_none(),
        generation_failure,
        conditions,
        rate_constants,
        rate_constants_failure,
        passed,
    };
    write_json(&out.join("check.json"), &output)?;
    let text = serde_json::to_string_pretty(&output).map_err(std::io::Error::other)?;
    if passed {
        Ok(text)
    } else {
        println!("{text}");
        let mut reasons = output.conditions.failures.clone();
        if !constants_ok {
            reasons.push("rate constants did not validate".into());
        }
        Err(CliError::ConditionFailed(format!("condition check failed: {}", reasons.join("; "))))
    }
}
