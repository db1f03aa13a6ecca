//! Verification of the conditions behind the convergence-rate results:
//! source-condition certificates, finite basis injectivity (FBI), the
//! constants of the variational rate inequality
//!
//! ```text
//! R_q(u) - R_q(u†) >= beta1 ||u - u†||^r - beta2 ||F(u) - F(u†)||
//! ```
//!
//! and the a-priori error bounds that follow from it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::operators::{check_dim, derivative_matrix, ForwardOperator};
use crate::penalty::{check_subgradient, dq_constant, eval_rq, subgradient_rq, PenaltySpec};
use crate::{all_finite, CoefficientVector, DataVector, Error, Result};

/// Coefficients with magnitude above this are in the support.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Relative residual `||F'(u†)^* omega - xi|| / (1 + ||xi||)` accepted for a certificate.
pub const SOURCE_REL_TOL: f64 = 1e-8;

/// Sampled inequalities may be violated by at most this much.
pub const SLACK_TOL: f64 = 1e-9;

/// Default bound `sigma` on `||F(u) - F(u†)||` in the region where rate
/// inequalities are asserted.
pub const RATE_SIGMA: f64 = 1.0;

/// Multiplier `gamma_3` of the `q = 1` subgradient certificate.
pub const GAMMA3: f64 = 0.5;

/// `gamma2` of the `q = 1` certificate for a linear operator with source
/// element `omega`. Both `R_1(u) - R_1(u†) >= <xi, h>` and `<xi, h>` are
/// bounded below by `-||omega|| ||K h||`, so
/// `R_1(u) - R_1(u†) + gamma3 <xi, h> >= -(1 + gamma3) ||omega|| ||K h||`.
/// The factor `1 + gamma3` cannot be replaced by `gamma3`: at `u† = 1`,
/// `u = 0.9` with `K = 1` the left side is `-0.15`.
pub fn l1_gamma2(omega_norm: f64) -> f64 {
    (1.0 + GAMMA3) * omega_norm
}

pub fn support(u: &CoefficientVector) -> Vec<usize> {
    u.iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > SUPPORT_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// Minimum-norm least-squares solution of `a x = b` via the SVD.
fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    svd.solve(b, cutoff)
        .expect("both singular vector sets were requested")
}

fn largest_singular_value(k: &DMatrix<f64>) -> f64 {
    if k.is_empty() {
        0.0
    } else {
        k.singular_values().max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCertificate {
    /// Subgradient element `xi` of `R_q` at `u†`.
    pub xi: CoefficientVector,
    /// Source element with `F'(u†)^* omega = xi`.
    pub omega: DataVector,
    pub residual: f64,
    pub tolerance: f64,
    /// `||omega||`, the constant in `|<xi, h>| <= beta2 ||F'(u†) h||`.
    pub beta2: f64,
    pub support: Vec<usize>,
}

/// Builds `xi` in `dR_q(u†)` and the least-norm `omega` with
/// `F'(u†)^* omega = xi`.
///
/// For `q > 1` the subgradient is unique. For `q = 1` it is fixed to
/// `w_i sgn(u†_i)` on the support; `omega` is the least-norm solution of the
/// support equations and the off-support entries are `(F'(u†)^* omega)_i`,
/// which must lie in `[-w_i, w_i]`.
pub fn check_source_condition(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
) -> Result<SourceCertificate> {
    check_dim(op.input_dim(), u_dagger.len())?;
    check_dim(op.input_dim(), spec.len())?;
    if !all_finite(u_dagger) {
        return Err(Error::NonFinite("u_dagger"));
    }
    let k = derivative_matrix(op, u_dagger)?;
    let supp = support(u_dagger);

    let (xi, omega) = if spec.q() > 1.0 {
        let xi = subgradient_rq(u_dagger, spec);
        let omega = least_norm_solve(&k.transpose(), &xi);
        (xi, omega)
    } else {
        let w = spec.weights();
        let xi_j = DVector::from_iterator(supp.len(), supp.iter().map(|&i| w[i] * u_dagger[i].signum()));
        let k_j = k.select_columns(supp.iter());
        let omega = least_norm_solve(&k_j.transpose(), &xi_j);
        let mut xi = k.tr_mul(&omega);
        for (row, &i) in supp.iter().enumerate() {
            xi[i] = xi_j[row];
        }
        (xi, omega)
    };

    let residual = (k.tr_mul(&omega) - &xi).norm();
    let tolerance = SOURCE_REL_TOL * (1.0 + xi.norm());
    if residual > tolerance {
        return Err(Error::SourceConditionViolated { residual, tolerance });
    }
    if let Err(i) = check_subgradient(u_dagger, &xi, spec, 1e-9) {
        return Err(Error::InvalidSubgradient(format!(
            "least-norm completion gives xi[{i}] = {:.6e} outside the subdifferential (weight {:.6e})",
            xi[i],
            spec.weights()[i]
        )));
    }
    Ok(SourceCertificate {
        beta2: omega.norm(),
        xi,
        omega,
        residual,
        tolerance,
        support: supp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbiReport {
    pub support: Vec<usize>,
    /// Smallest singular value of the support columns of `F'(u†)`;
    /// `+inf` for an empty support (serialized as `null`).
    pub sigma_min: f64,
    /// `1 / sigma_min`, or `+inf` when injectivity fails.
    pub injectivity_constant: f64,
    pub injective: bool,
    pub empty_support: bool,
}

pub fn fbi_check(op: &dyn ForwardOperator, u_dagger: &CoefficientVector) -> Result<FbiReport> {
    check_dim(op.input_dim(), u_dagger.len())?;
    let k = derivative_matrix(op, u_dagger)?;
    Ok(fbi_on_columns(&k, support(u_dagger)))
}

/// FBI check of `F'(at)` on an arbitrary index set.
pub fn fbi_check_on(
    op: &dyn ForwardOperator,
    at: &CoefficientVector,
    indices: Vec<usize>,
) -> Result<FbiReport> {
    check_dim(op.input_dim(), at.len())?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= op.input_dim()) {
        return Err(Error::InvalidArgument(format!("index {bad} out of range")));
    }
    let k = derivative_matrix(op, at)?;
    Ok(fbi_on_columns(&k, indices))
}

fn fbi_on_columns(k: &DMatrix<f64>, indices: Vec<usize>) -> FbiReport {
    if indices.is_empty() {
        return FbiReport {
            support: indices,
            sigma_min: f64::INFINITY,
            injectivity_constant: 0.0,
            injective: true,
            empty_support: true,
        };
    }
    let sub = k.select_columns(indices.iter());
    let (sigma_min, sigma_max) = if sub.ncols() > sub.nrows() {
        (0.0, largest_singular_value(&sub))
    } else {
        let sv = sub.singular_values();
        (sv.min(), sv.max())
    };
    let rank_tol = sub.nrows().max(sub.ncols()) as f64 * f64::EPSILON * sigma_max;
    let injective = sigma_min > rank_tol;
    FbiReport {
        support: indices,
        sigma_min,
        injectivity_constant: if injective { 1.0 / sigma_min } else { f64::INFINITY },
        injective,
        empty_support: false,
    }
}

/// Which argument produced a set of rate constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateRoute {
    /// `r = 2` from the source condition and the Bregman distance bound (`q > 1`).
    SourceCondition,
    /// `r = q` from sparsity, FBI and the range condition (`q > 1`).
    SparseQ,
    /// `r = 1` from sparsity, FBI and a strict `q = 1` certificate.
    SparseOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub r: f64,
    /// The inequality is asserted for `R_q(u) < rho` ...
    pub rho: f64,
    /// ... and `||F(u) - F(u†)|| < sigma`.
    pub sigma: f64,
    pub route: RateRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateViolation {
    pub sample: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateValidation {
    pub samples: usize,
    /// Samples inside the region where the inequality is asserted.
    pub in_region: usize,
    pub min_slack: f64,
    pub violations: Vec<RateViolation>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstantsReport {
    pub constants: RateConstants,
    /// `||omega||` of the source certificate.
    pub certificate_beta2: f64,
    /// `||F'(u†)||`.
    pub operator_norm: f64,
    /// `C` with `C ||F'(u†) w|| >= ||w||` on the relevant span, if used.
    pub injectivity_constant: Option<f64>,
    /// `w_min - max |xi_i|` over coordinates with `|xi_i| < w_min` (`q = 1`).
    pub certificate_gap: Option<f64>,
    pub validation: RateValidation,
}

/// The exponent used by default for a given `q`: `1` for `q = 1`, `q` for
/// `1 < q < 2` and `2` for `q = 2`.
pub fn default_rate_exponent(q: f64) -> f64 {
    q
}

fn select_route(q: f64, r: f64) -> Result<RateRoute> {
    if q == 1.0 && r == 1.0 {
        Ok(RateRoute::SparseOne)
    } else if q > 1.0 && r == 2.0 {
        Ok(RateRoute::SourceCondition)
    } else if q > 1.0 && (r - q).abs() <= 1e-12 {
        Ok(RateRoute::SparseQ)
    } else {
        Err(Error::InvalidArgument(format!(
            "no rate constants available for q = {q}, r = {r}"
        )))
    }
}

/// Certified constants for a linear operator, followed by sampled validation
/// of the inequality on `n_samples` perturbations of size at most `radius`.
///
/// - `r = 2`, `q > 1`: `beta1 = d_q w_min^2 / (4 w_min + 3 R_q(u†))`,
///   `beta2 = ||omega||`, `rho = R_q(u†) + w_min`.
/// - `r = q`, `q > 1`: with `C = 1 / sigma_min` on the support and
///   `A = 2 (1 + 2 C^q ||K||^q) / w_min`: `beta1 = 1 / A`,
///   `beta2 = ||omega|| + 4 C^q sigma^(q-1) / A`.
/// - `r = 1`, `q = 1`: with `J' = {i : |xi_i| >= w_min}`, `m = max_{i not in J'} |xi_i|`,
///   `C = 1 / sigma_min` on `J'`, the certificate constants `gamma3 = 1/2`,
///   `gamma2 = (1 + gamma3) ||omega||`, `A = (1 + 1/gamma3) (1 + C ||K||) / (w_min - m)` and
///   `B = C + (gamma2 / gamma3) (1 + C ||K||) / (w_min - m)`: `beta1 = 1 / A`, `beta2 = B / A`.
pub fn estimate_rate_constants(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    r: f64,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<RateConstantsReport> {
    if !op.is_linear() {
        return Err(Error::NotLinear);
    }
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "n_samples = {n_samples}, need at least 100"
        )));
    }
    let route = select_route(spec.q(), r)?;
    let cert = check_source_condition(op, u_dagger, spec)?;
    let k = derivative_matrix(op, u_dagger)?;
    let norm_k = largest_singular_value(&k);
    let q = spec.q();
    let w_min = spec.w_min();
    let r_dagger = eval_rq(u_dagger, spec);
    let sigma = RATE_SIGMA;

    let fbi_constant = |indices: Vec<usize>| -> Result<f64> {
        let fbi = fbi_on_columns(&k, indices);
        if fbi.injective {
            Ok(fbi.injectivity_constant)
        } else {
            Err(Error::BoundInapplicable(format!(
                "derivative is not injective on {:?} (sigma_min = {:.3e})",
                fbi.support, fbi.sigma_min
            )))
        }
    };

    let mut injectivity_constant = None;
    let mut certificate_gap = None;
    let (beta1, beta2) = match route {
        RateRoute::SourceCondition => {
            let c_q = dq_constant(q)? * w_min * w_min;
            (c_q / (4.0 * w_min + 3.0 * r_dagger), cert.beta2)
        }
        RateRoute::SparseQ => {
            let c = fbi_constant(cert.support.clone())?;
            injectivity_constant = Some(c);
            let cq = c.powf(q);
            let a = 2.0 * (1.0 + 2.0 * cq * norm_k.powf(q)) / w_min;
            (1.0 / a, cert.beta2 + 4.0 * cq * sigma.powf(q - 1.0) / a)
        }
        RateRoute::SparseOne => {
            let (extended, gap) = extended_support(&cert.xi, w_min);
            if gap <= 0.0 {
                return Err(Error::BoundInapplicable(format!(
                    "no strict gap between off-support |xi_i| and w_min (gap {gap:.3e})"
                )));
            }
            let c = fbi_constant(extended)?;
            injectivity_constant = Some(c);
            certificate_gap = Some(gap);
            let gamma2 = l1_gamma2(cert.beta2);
            let a = (1.0 + 1.0 / GAMMA3) * (1.0 + c * norm_k) / gap;
            let b = c + gamma2 / GAMMA3 * (1.0 + c * norm_k) / gap;
            (1.0 / a, b / a)
        }
    };

    let constants = RateConstants {
        beta1,
        beta2,
        r,
        rho: r_dagger + w_min,
        sigma,
        route,
    };
    let validation =
        validate_rate_constants(op, u_dagger, spec, &constants, n_samples, radius, seed)?;
    Ok(RateConstantsReport {
        constants,
        certificate_beta2: cert.beta2,
        operator_norm: norm_k,
        injectivity_constant,
        certificate_gap,
        validation,
    })
}

/// `J' = {i : |xi_i| >= w_min}` and `w_min - max_{i not in J'} |xi_i|`.
fn extended_support(xi: &CoefficientVector, w_min: f64) -> (Vec<usize>, f64) {
    let threshold = w_min * (1.0 - 1e-12);
    let extended = (0..xi.len()).filter(|&i| xi[i].abs() >= threshold).collect();
    let m = xi
        .iter()
        .filter(|x| x.abs() < threshold)
        .fold(0.0_f64, |acc, x| acc.max(x.abs()));
    (extended, w_min - m)
}

/// Perturbation `h` of sample `index`: a Gaussian direction that is generic,
/// restricted to the support, or restricted to its complement (cycling), with
/// norm uniform in `(0, radius]`.
fn sample_perturbation(index: usize, seed: u64, n: usize, supp: &[usize], radius: f64) -> CoefficientVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let mut mask = vec![true; n];
    match index % 3 {
        1 if !supp.is_empty() => {
            mask.iter_mut().for_each(|m| *m = false);
            supp.iter().for_each(|&i| mask[i] = true);
        }
        2 if supp.len() < n => supp.iter().for_each(|&i| mask[i] = false),
        _ => {}
    }
    let mut h = CoefficientVector::from_fn(n, |i, _| {
        let g: f64 = rng.sample(StandardNormal);
        if mask[i] {
            g
        } else {
            0.0
        }
    });
    let norm = h.norm();
    if norm == 0.0 {
        return h;
    }
    let length = radius * (1.0 - rng.random::<f64>());
    h *= length / norm;
    h
}

/// Evaluates the rate inequality on sampled perturbations `u = u† + h`; only
/// samples inside the region `R_q(u) < rho`, `||F(u) - F(u†)|| < sigma`
/// count. Sample `i` uses the seed `seed + i`.
pub fn validate_rate_constants(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    constants: &RateConstants,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<RateValidation> {
    check_dim(op.input_dim(), u_dagger.len())?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius = {radius} must be positive")));
    }
    let n = op.input_dim();
    let supp = support(u_dagger);
    let f_dagger = op.apply(u_dagger)?;
    let r_dagger = eval_rq(u_dagger, spec);

    let slacks: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let h = sample_perturbation(i, seed, n, &supp, radius);
            let u = u_dagger + &h;
            let r_u = eval_rq(&u, spec);
            let dist = (op.apply(&u)? - &f_dagger).norm();
            if r_u >= constants.rho || dist >= constants.sigma {
                return Ok(None);
            }
            Ok(Some(
                r_u - r_dagger - constants.beta1 * h.norm().powf(constants.r) + constants.beta2 * dist,
            ))
        })
        .collect::<Result<_>>()?;

    let violations: Vec<RateViolation> = slacks
        .iter()
        .enumerate()
        .filter_map(|(sample, s)| s.filter(|&v| v < -SLACK_TOL).map(|slack| RateViolation { sample, slack }))
        .collect();
    let in_region = slacks.iter().flatten().count();
    Ok(RateValidation {
        samples: n_samples,
        in_region,
        min_slack: slacks.iter().flatten().copied().fold(f64::INFINITY, f64::min),
        passed: violations.is_empty() && in_region > 0,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBound {
    /// Upper bound on `||u_alpha^delta - u†||`.
    pub err_bound: f64,
    /// Upper bound on `||F(u_alpha^delta) - v^delta||`.
    pub residual_bound: f64,
}

/// The a-priori bounds for a minimizer with noise level `delta`:
///
/// - `p = 1`, `alpha beta2 < 1`: `||u - u†||^r <= (1 + alpha beta2) delta / (alpha beta1)` and
///   `||F(u) - v^delta|| <= (1 + alpha beta2) delta / (1 - alpha beta2)`;
/// - `p = 2`: `||u - u†||^r <= (delta^2 + alpha beta2 delta + (alpha beta2)^2 / 2) / (alpha beta1)`
///   and `||F(u) - v^delta||^2 <= 2 delta^2 + 2 alpha beta2 delta + (alpha beta2)^2`.
pub fn theoretical_bound(
    constants: &RateConstants,
    p: u32,
    alpha: f64,
    delta: f64,
) -> Result<TheoreticalBound> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be nonnegative")));
    }
    let ab = alpha * constants.beta2;
    let (err_pow, residual_bound) = match p {
        1 => {
            if ab >= 1.0 {
                return Err(Error::BoundInapplicable(format!(
                    "p = 1 needs alpha * beta2 < 1, got {ab:.6e}"
                )));
            }
            ((1.0 + ab) * delta / (alpha * constants.beta1), (1.0 + ab) * delta / (1.0 - ab))
        }
        2 => (
            (delta * delta + ab * delta + 0.5 * ab * ab) / (alpha * constants.beta1),
            (2.0 * delta * delta + 2.0 * ab * delta + ab * ab).sqrt(),
        ),
        _ => return Err(Error::InvalidArgument(format!("p = {p} not in {{1, 2}}"))),
    };
    Ok(TheoreticalBound {
        err_bound: err_pow.powf(1.0 / constants.r),
        residual_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            radius: 0.1,
            seed: 0,
        }
    }
}

/// Sampled check of
/// `R_q(u) - R_q(u†) >= gamma1 ||F(u) - F(u†) - F'(u†)(u - u†)|| - gamma2 ||F(u) - F(u†)||`
/// with `gamma1 = 1` and the smallest `gamma2` consistent with every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCondition {
    pub gamma1: f64,
    /// `+inf` when no finite value works (serialized as `null`).
    pub gamma2: f64,
    pub samples: usize,
    pub in_region: usize,
    pub passed: bool,
}

/// The `q = 1` certificate: `R_1(u) - R_1(u†) >= -gamma3 <xi, u - u†> - gamma2 ||F(u) - F(u†)||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Certificate {
    pub gamma3: f64,
    pub gamma2: f64,
    /// `w_min - max |xi_i|` over `i` outside `J' = {|xi_i| >= w_min}`.
    pub gap: f64,
    pub extended_fbi: FbiReport,
    pub samples: usize,
    pub in_region: usize,
    pub violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRateReport {
    pub linear: bool,
    /// Whether `|supp u†| < n`.
    pub sparse: bool,
    pub fbi: FbiReport,
    pub source: Option<SourceCertificate>,
    pub source_failure: Option<String>,
    pub l1_certificate: Option<L1Certificate>,
    /// Sampled nonlinearity condition (nonlinear operators only).
    pub sampled: Option<SampledCondition>,
    pub failures: Vec<String>,
    pub passed: bool,
}

pub fn check_sparse_rate_conditions(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
) -> Result<SparseRateReport> {
    check_sparse_rate_conditions_with(op, u_dagger, spec, &SamplingOptions::default())
}

/// For linear operators the sparse-rate condition reduces to the range
/// condition, so this combines [`check_source_condition`] and
/// [`fbi_check`]; for nonlinear operators the condition is sampled.
pub fn check_sparse_rate_conditions_with(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    opts: &SamplingOptions,
) -> Result<SparseRateReport> {
    check_dim(op.input_dim(), spec.len())?;
    let fbi = fbi_check(op, u_dagger)?;
    let mut failures = Vec::new();
    if !fbi.injective {
        failures.push(format!(
            "finite basis injectivity fails on the support (sigma_min = {:.3e})",
            fbi.sigma_min
        ));
    }

    let (source, source_failure) = match check_source_condition(op, u_dagger, spec) {
        Ok(cert) => (Some(cert), None),
        Err(e @ (Error::SourceConditionViolated { .. } | Error::InvalidSubgradient(_))) => {
            failures.push(format!("source condition: {e}"));
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };

    let linear = op.is_linear();
    let sampled = if linear {
        None
    } else {
        let s = sample_nonlinearity_condition(op, u_dagger, spec, opts)?;
        if !s.passed {
            failures.push("sampled nonlinearity condition admits no finite gamma2".into());
        }
        Some(s)
    };

    let l1_certificate = match (&source, spec.q() == 1.0) {
        (Some(cert), true) => {
            let c = l1_certificate(op, u_dagger, spec, cert, linear, opts)?;
            if !c.passed {
                failures.push(format!(
                    "q = 1 certificate fails (gap {:.3e}, extended FBI {}, {} sampled violations)",
                    c.gap, c.extended_fbi.injective, c.violations
                ));
            }
            Some(c)
        }
        _ => None,
    };

    Ok(SparseRateReport {
        linear,
        sparse: fbi.support.len() < op.input_dim(),
        fbi,
        source,
        source_failure,
        l1_certificate,
        sampled,
        passed: failures.is_empty(),
        failures,
    })
}

struct RegionSample {
    h: CoefficientVector,
    delta_r: f64,
    dist: f64,
    linearization_error: f64,
}

fn region_samples(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    opts: &SamplingOptions,
) -> Result<Vec<RegionSample>> {
    let n = op.input_dim();
    let supp = support(u_dagger);
    let f_dagger = op.apply(u_dagger)?;
    let r_dagger = eval_rq(u_dagger, spec);
    let rho = r_dagger + spec.w_min();
    let all: Vec<Option<RegionSample>> = (0..opts.samples)
        .into_par_iter()
        .map(|i| -> Result<Option<RegionSample>> {
            let h = sample_perturbation(i, opts.seed, n, &supp, opts.radius);
            let u = u_dagger + &h;
            let r_u = eval_rq(&u, spec);
            let diff = op.apply(&u)? - &f_dagger;
            let dist = diff.norm();
            if r_u >= rho || dist >= RATE_SIGMA {
                return Ok(None);
            }
            let linearization_error = (diff - op.derivative_apply(u_dagger, &h)?).norm();
            Ok(Some(RegionSample {
                h,
                delta_r: r_u - r_dagger,
                dist,
                linearization_error,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(all.into_iter().flatten().collect())
}

/// Smallest `g >= 0` with `lhs_i - g dist_i <= SLACK_TOL` for all samples.
fn fit_gamma(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.fold(0.0_f64, |g, (lhs, dist)| {
        if lhs <= SLACK_TOL {
            g
        } else if dist > 0.0 {
            g.max(lhs / dist)
        } else {
            f64::INFINITY
        }
    })
}

fn sample_nonlinearity_condition(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    opts: &SamplingOptions,
) -> Result<SampledCondition> {
    let samples = region_samples(op, u_dagger, spec, opts)?;
    let gamma1 = 1.0;
    let gamma2 = fit_gamma(
        samples
            .iter()
            .map(|s| (gamma1 * s.linearization_error - s.delta_r, s.dist)),
    );
    Ok(SampledCondition {
        gamma1,
        gamma2,
        samples: opts.samples,
        in_region: samples.len(),
        passed: gamma2.is_finite() && !samples.is_empty(),
    })
}

fn l1_certificate(
    op: &dyn ForwardOperator,
    u_dagger: &CoefficientVector,
    spec: &PenaltySpec,
    cert: &SourceCertificate,
    linear: bool,
    opts: &SamplingOptions,
) -> Result<L1Certificate> {
    let (extended, gap) = extended_support(&cert.xi, spec.w_min());
    let extended_fbi = fbi_check_on(op, u_dagger, extended)?;
    let samples = region_samples(op, u_dagger, spec, opts)?;
    let lhs = |s: &RegionSample| -s.delta_r - GAMMA3 * cert.xi.dot(&s.h);
    let (gamma2, violations) = if linear {
        let gamma2 = l1_gamma2(cert.beta2);
        let violations = samples
            .iter()
            .filter(|s| lhs(s) - gamma2 * s.dist > SLACK_TOL)
            .count();
        (gamma2, violations)
    } else {
        let gamma2 = fit_gamma(samples.iter().map(|s| (lhs(s), s.dist)));
        (gamma2, usize::from(!gamma2.is_finite()))
    };
    Ok(L1Certificate {
        gamma3: GAMMA3,
        gamma2,
        gap,
        passed: gap > 0.0 && extended_fbi.injective && violations == 0 && !samples.is_empty(),
        extended_fbi,
        samples: opts.samples,
        in_region: samples.len(),
        violations,
    })
}
