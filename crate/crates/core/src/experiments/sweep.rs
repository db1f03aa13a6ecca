use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{splitmix64, ProblemInstance};
use crate::analysis::{
    default_rate_exponent, estimate_rate_constants, theoretical_bound, RateConstantsReport,
};
use crate::penalty::eval_rq;
use crate::solver::{solve, SolverConfig};
use crate::{all_finite, DataVector, Error, Result};

pub const CSV_HEADER: &str =
    "delta,alpha,trial,error_norm,residual_norm,err_bound,residual_bound,iterations,converged";

/// A rate fit needs at least this many noise levels.
pub const MIN_FIT_POINTS: usize = 4;

/// Cells whose last solver step exceeds this fraction of the measured error
/// are excluded from the fit.
const SOLVER_FLOOR_FRACTION: f64 = 0.01;

/// `clean + delta * g / ||g||` for a seeded standard Gaussian `g`, so that
/// the perturbation has norm exactly `delta` (up to rounding).
pub fn add_noise(clean: &DataVector, delta: f64, seed: u64) -> Result<DataVector> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be nonnegative")));
    }
    if delta == 0.0 || clean.is_empty() {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DataVector::from_fn(clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    while g.norm() == 0.0 {
        g = DataVector::from_fn(clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    }
    let norm = g.norm();
    Ok(clean + g * (delta / norm))
}

/// `c * delta^(p - 1)`.
pub fn alpha_rule(delta: f64, p: u32, c: f64) -> f64 {
    c * delta.powi(p as i32 - 1)
}

/// `count` logarithmically spaced values from `max` down to `min`.
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && min.is_finite() && max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta grid needs 0 < min < max, got [{min}, {max}]"
        )));
    }
    match count {
        0 => Err(Error::InvalidArgument("empty delta grid".into())),
        1 => Ok(vec![max]),
        _ => {
            let (lo, hi) = (min.ln(), max.ln());
            let step = (hi - lo) / (count - 1) as f64;
            Ok((0..count)
                .map(|k| match k {
                    0 => max,
                    k if k == count - 1 => min,
                    k => (hi - step * k as f64).exp(),
                })
                .collect())
        }
    }
}

/// Seed of the cell `(delta_index, trial)`, independent of execution order.
pub fn cell_seed(seed: u64, delta_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(delta_index as u64)) ^ trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Strictly decreasing noise levels.
    pub deltas: Vec<f64>,
    pub c_alpha: f64,
    pub trials: usize,
    pub seed: u64,
    /// Solver settings; `alpha` is overwritten per cell and `tol` is capped
    /// at `1e-4 * delta`.
    pub solver: SolverConfig,
    /// Samples and radius used to validate the rate constants.
    pub constant_samples: usize,
    pub constant_radius: f64,
}

impl SweepOptions {
    pub fn new(deltas: Vec<f64>, c_alpha: f64, trials: usize, seed: u64) -> Self {
        Self {
            deltas,
            c_alpha,
            trials,
            seed,
            solver: SolverConfig::default(),
            constant_samples: 1000,
            constant_radius: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::InvalidArgument("empty delta grid".into()));
        }
        if self.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument("deltas must be positive".into()));
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("deltas must be strictly decreasing".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.c_alpha.is_finite() && self.c_alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("c_alpha = {} must be positive", self.c_alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub alpha: f64,
    pub trial: usize,
    pub error_norm: f64,
    pub residual_norm: f64,
    pub err_bound: Option<f64>,
    pub residual_bound: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last solver step, an estimate of the optimization error.
    pub solver_step: f64,
    /// `||F(u) - F(u†)||`.
    pub forward_gap: f64,
    /// Whether the regularized solution lies in the region where the rate
    /// inequality is asserted (`None` without validated constants).
    pub in_region: Option<bool>,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.delta,
            self.alpha,
            self.trial,
            self.error_norm,
            self.residual_norm,
            opt(self.err_bound),
            opt(self.residual_bound),
            self.iterations,
            self.converged
        )
    }

    /// Whether the measured error exceeds the bound, when one was evaluated.
    pub fn violates_bound(&self) -> bool {
        self.err_bound.is_some_and(|b| self.error_norm > b)
            || self.residual_bound.is_some_and(|b| self.residual_norm > b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub alpha: f64,
    pub mean_error: f64,
    pub mean_residual: f64,
    /// Every trial converged and stayed above the solver floor.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub per_delta: Vec<DeltaSummary>,
    pub rate: Option<RateEstimate>,
    pub rate_failure: Option<String>,
    /// Validated constants used for the bound columns.
    pub constants: Option<RateConstantsReport>,
    pub constants_failure: Option<String>,
    pub bound_violations: usize,
}

impl SweepResult {
    pub fn rate(&self) -> Result<&RateEstimate> {
        self.rate.as_ref().ok_or_else(|| Error::InsufficientData {
            valid: self.per_delta.iter().filter(|d| d.valid).count(),
            required: MIN_FIT_POINTS,
        })
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv_line())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ASCII")
    }
}

/// Least-squares line through `(ln delta, ln error)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateEstimate> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, e)| *d > 0.0 && *e > 0.0 && d.is_finite() && e.is_finite())
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData {
            valid: usable.len(),
            required: 2,
        });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all deltas coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = usable
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateEstimate {
        slope,
        intercept,
        r_squared,
        n_points: usable.len(),
    })
}

pub fn run_sweep(
    instance: &ProblemInstance,
    deltas: &[f64],
    c_alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<SweepResult> {
    run_sweep_with(instance, &SweepOptions::new(deltas.to_vec(), c_alpha, trials, seed))
}

/// Solves every `(delta, trial)` cell (in parallel, results in grid order),
/// evaluates the a-priori bounds when rate constants validate, and fits the
/// rate over the noise levels whose cells all converged above the solver
/// floor.
pub fn run_sweep_with(instance: &ProblemInstance, opts: &SweepOptions) -> Result<SweepResult> {
    opts.validate()?;
    let op = instance.operator.as_ref();
    let p = instance.p;

    let (constants, constants_failure) = if op.is_linear() {
        match estimate_rate_constants(
            op,
            &instance.u_dagger,
            &instance.spec,
            default_rate_exponent(instance.spec.q()),
            opts.constant_samples,
            opts.constant_radius,
            opts.seed,
        ) {
            Ok(report) if report.validation.passed => (Some(report), None),
            Ok(report) => (
                None,
                Some(format!(
                    "sampled validation failed: {} violations",
                    report.validation.violations.len()
                )),
            ),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("rate constants are certified for linear operators only".into()))
    };

    let cells: Vec<(usize, usize)> = (0..opts.deltas.len())
        .flat_map(|i| (0..opts.trials).map(move |t| (i, t)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, trial)| -> Result<SweepRow> {
            let delta = opts.deltas[i];
            let alpha = alpha_rule(delta, p, opts.c_alpha);
            let data = add_noise(&instance.clean_data, delta, cell_seed(opts.seed, i, trial))?;
            let cfg = SolverConfig {
                p,
                alpha,
                tol: opts.solver.tol.min(1e-4 * delta),
                ..opts.solver.clone()
            };
            let report = solve(op, &data, &instance.spec, &cfg, None)?;
            let u = &report.minimizer;
            if !all_finite(u) {
                return Err(Error::NonFinite("regularized solution"));
            }
            let forward_gap = (op.apply(u)? - &instance.clean_data).norm();
            let (err_bound, residual_bound, in_region) = match &constants {
                Some(c) => match theoretical_bound(&c.constants, p, alpha, delta) {
                    Ok(b) => {
                        let inside = eval_rq(u, &instance.spec) < c.constants.rho
                            && forward_gap < c.constants.sigma;
                        (Some(b.err_bound), Some(b.residual_bound), Some(inside))
                    }
                    Err(Error::BoundInapplicable(_)) => (None, None, None),
                    Err(e) => return Err(e),
                },
                None => (None, None, None),
            };
            Ok(SweepRow {
                delta,
                alpha,
                trial,
                error_norm: (u - &instance.u_dagger).norm(),
                residual_norm: report.residual_norm,
                err_bound,
                residual_bound,
                iterations: report.iterations,
                converged: report.converged,
                solver_step: report.final_step,
                forward_gap,
                in_region,
            })
        })
        .collect::<Result<_>>()?;

    let per_delta: Vec<DeltaSummary> = rows
        .chunks(opts.trials)
        .map(|chunk| {
            let k = chunk.len() as f64;
            DeltaSummary {
                delta: chunk[0].delta,
                alpha: chunk[0].alpha,
                mean_error: chunk.iter().map(|r| r.error_norm).sum::<f64>() / k,
                mean_residual: chunk.iter().map(|r| r.residual_norm).sum::<f64>() / k,
                valid: chunk.iter().all(|r| {
                    r.converged && r.solver_step <= SOLVER_FLOOR_FRACTION * r.error_norm
                }),
            }
        })
        .collect();

    let points: Vec<(f64, f64)> = per_delta
        .iter()
        .filter(|d| d.valid && d.mean_error > 0.0)
        .map(|d| (d.delta, d.mean_error))
        .collect();
    let (rate, rate_failure) = if points.len() < MIN_FIT_POINTS {
        (
            None,
            Some(
                Error::InsufficientData {
                    valid: points.len(),
                    required: MIN_FIT_POINTS,
                }
                .to_string(),
            ),
        )
    } else {
        match fit_rate(&points) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let bound_violations = rows.iter().filter(|r| r.violates_bound()).count();
    Ok(SweepResult {
        rows,
        per_delta,
        rate,
        rate_failure,
        constants,
        constants_failure,
        bound_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn noise_has_exact_norm() {
        let clean = DataVector::from_fn(50, |i, _| i as f64 * 0.1);
        for delta in [1e-6, 1e-3, 0.1, 2.0] {
            let noisy = add_noise(&clean, delta, 9).unwrap();
            assert_relative_eq!((noisy - &clean).norm(), delta, max_relative = 1e-14);
        }
        assert_eq!(add_noise(&clean, 0.0, 9).unwrap(), clean);
        assert_eq!(add_noise(&clean, 0.1, 4).unwrap(), add_noise(&clean, 0.1, 4).unwrap());
        assert!(add_noise(&clean, -1.0, 4).is_err());
    }

    #[test]
    fn alpha_rule_examples() {
        assert_relative_eq!(alpha_rule(0.01, 2, 1.0), 0.01);
        assert_eq!(alpha_rule(0.37, 1, 0.1), 0.1);
        assert_relative_eq!(alpha_rule(0.1, 2, 5.0), 0.5);
    }

    #[test]
    fn grid_is_decreasing_with_exact_ends() {
        let g = log_grid(1e-4, 1e-1, 10).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 1e-1);
        assert_eq!(g[9], 1e-4);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert!(log_grid(1e-4, 1e-1, 0).is_err());
        assert!(log_grid(1e-1, 1e-4, 5).is_err());
    }

    #[test]
    fn exact_power_law_fit() {
        let points: Vec<(f64, f64)> = log_grid(1e-4, 1e-1, 10)
            .unwrap()
            .into_iter()
            .map(|d| (d, 3.0 * d))
            .collect();
        let fit = fit_rate(&points).unwrap();
        assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 3.0_f64.ln(), epsilon = 1e-12);
        assert_eq!(fit.n_points, 10);
    }

    #[test]
    fn cell_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10 {
            for t in 0..5 {
                assert!(seen.insert(cell_seed(7, i, t)));
            }
        }
    }

    #[test]
    fn csv_formatting() {
        let row = SweepRow {
            delta: 0.1,
            alpha: 0.1,
            trial: 2,
            error_norm: 1.5e-3,
            residual_norm: 0.25,
            err_bound: None,
            residual_bound: Some(3.0),
            iterations: 17,
            converged: true,
            solver_step: 0.0,
            forward_gap: 0.0,
            in_region: None,
        };
        assert_eq!(row.csv_line(), "0.1,0.1,2,0.0015,0.25,nan,3,17,true");
    }
}
