//! Benchmark problems, noise, parameter choice, noise-level sweeps and rate
//! fitting.

mod recovery;
mod sweep;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use recovery::{exact_recovery_test, ExactRecoveryReport, RecoveryStatus};
pub use sweep::{
    add_noise, alpha_rule, cell_seed, fit_rate, log_grid, run_sweep, run_sweep_with, DeltaSummary,
    RateEstimate, SweepOptions, SweepResult, SweepRow, CSV_HEADER, MIN_FIT_POINTS,
};

use crate::analysis::{check_source_condition, fbi_check, FbiReport, SourceCertificate};
use crate::operators::{
    make_convolution_linear, make_dense_linear, make_diagonal_linear, make_toy_nonlinear,
    CircularConvolution, DiagonalLinear, ForwardOperator,
};
use crate::penalty::PenaltySpec;
use crate::{CoefficientVector, DataVector, Error, Result};

/// Number of draws [`generate_problem`] makes before giving up.
pub const MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `s_i = (i + 1)^{-decay}`, `m = n`.
    Diagonal,
    /// Circular convolution with a sampled Gaussian, `m = n`.
    Convolution,
    /// `m x n` matrix with i.i.d. `N(0, 1/m)` entries.
    RandomDense,
    /// `F(u) = A u + eps B (u ⊙ u)` with random `A`, `B` as in `RandomDense`.
    ToyNonlinear,
}

/// Penalty weights: one value for every coefficient or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Uniform(f64),
    List(Vec<f64>),
}

impl Weights {
    pub fn to_vec(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Weights::Uniform(w) => Ok(vec![*w; n]),
            Weights::List(list) if list.len() == n => Ok(list.clone()),
            Weights::List(list) => Err(Error::DimensionMismatch {
                expected: n,
                actual: list.len(),
            }),
        }
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::Uniform(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    /// Data dimension; ignored by the square kinds.
    pub m: usize,
    pub sparsity: usize,
    pub q: f64,
    pub p: u32,
    pub seed: u64,
    pub weights: Weights,
    /// Singular value decay of `Diagonal`.
    pub decay: f64,
    /// Gaussian kernel width of `Convolution`.
    pub width: f64,
    /// Nonlinearity strength of `ToyNonlinear`.
    pub epsilon: f64,
    /// Replaces the random matrix of `RandomDense` (or `A` of `ToyNonlinear`).
    #[serde(skip)]
    pub matrix: Option<DMatrix<f64>>,
    /// Replaces the random sparse `u†`.
    pub u_dagger: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, n: usize, sparsity: usize, q: f64, p: u32, seed: u64) -> Self {
        Self {
            kind,
            n,
            m: n,
            sparsity,
            q,
            p,
            seed,
            weights: Weights::default(),
            decay: 1.0,
            width: 1.0,
            epsilon: 1e-3,
            matrix: None,
            u_dagger: None,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Diagonal | ProblemKind::Convolution => self.n,
            ProblemKind::RandomDense | ProblemKind::ToyNonlinear => {
                self.matrix.as_ref().map_or(self.m, |a| a.nrows())
            }
        }
    }

    pub fn penalty(&self) -> Result<PenaltySpec> {
        PenaltySpec::new(self.q, self.weights.to_vec(self.n)?)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if self.sparsity > self.n {
            return Err(Error::InvalidArgument(format!(
                "sparsity {} exceeds n = {}",
                self.sparsity, self.n
            )));
        }
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidArgument(format!("p = {} not in {{1, 2}}", self.p)));
        }
        if self.data_dim() == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if let Some(a) = &self.matrix {
            if a.ncols() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    actual: a.ncols(),
                });
            }
        }
        if let Some(u) = &self.u_dagger {
            if u.len() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    actual: u.len(),
                });
            }
        }
        self.penalty().map(|_| ())
    }
}

/// A forward operator together with a verified `R_q`-minimizing solution.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub operator: Arc<dyn ForwardOperator>,
    pub u_dagger: CoefficientVector,
    /// `v = F(u†)`.
    pub clean_data: DataVector,
    pub spec: PenaltySpec,
    pub p: u32,
    pub sparsity: usize,
    /// Seed of the successful draw.
    pub seed: u64,
    pub certificate: SourceCertificate,
    pub fbi: FbiReport,
}

impl ProblemInstance {
    /// Wraps a caller-built operator and solution after running the same
    /// checks as [`generate_problem`].
    pub fn from_parts(
        kind: ProblemKind,
        operator: Arc<dyn ForwardOperator>,
        u_dagger: CoefficientVector,
        spec: PenaltySpec,
        p: u32,
        seed: u64,
    ) -> Result<Self> {
        let fbi = fbi_check(operator.as_ref(), &u_dagger)?;
        if !fbi.injective {
            return Err(Error::BoundInapplicable(format!(
                "finite basis injectivity fails (sigma_min = {:.3e})",
                fbi.sigma_min
            )));
        }
        let certificate = check_source_condition(operator.as_ref(), &u_dagger, &spec)?;
        let clean_data = operator.apply(&u_dagger)?;
        Ok(Self {
            kind,
            sparsity: fbi.support.len(),
            operator,
            u_dagger,
            clean_data,
            spec,
            p,
            seed,
            certificate,
            fbi,
        })
    }
}

/// 64-bit finalizer of SplitMix64.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(attempt as u64))
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `sparsity` nonzero entries at uniformly drawn positions with values
/// uniform in `±[0.5, 1.5]`.
fn sparse_vector(rng: &mut ChaCha8Rng, n: usize, sparsity: usize) -> CoefficientVector {
    let mut positions = sample_indices(rng, n, sparsity).into_vec();
    positions.sort_unstable();
    let mut u = CoefficientVector::zeros(n);
    for i in positions {
        let magnitude = rng.random_range(0.5..=1.5);
        u[i] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    u
}

fn build_operator(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Result<Arc<dyn ForwardOperator>> {
    let n = spec.n;
    let m = spec.data_dim();
    Ok(match spec.kind {
        ProblemKind::Diagonal => Arc::new(DiagonalLinear::power_decay(n, spec.decay)?),
        ProblemKind::Convolution => Arc::new(CircularConvolution::gaussian(spec.width, n)?),
        ProblemKind::RandomDense => {
            let a = match &spec.matrix {
                Some(a) => a.clone(),
                None => gaussian_matrix(rng, m, n),
            };
            Arc::new(make_dense_linear(a)?)
        }
        ProblemKind::ToyNonlinear => {
            let a = match &spec.matrix {
                Some(a) => a.clone(),
                None => gaussian_matrix(rng, m, n),
            };
            let b = gaussian_matrix(rng, m, n);
            Arc::new(make_toy_nonlinear(a, b, spec.epsilon)?)
        }
    })
}

/// The operator and `u†` of one draw, without any condition checks.
pub fn draw_unchecked(
    spec: &ProblemSpec,
    attempt: usize,
) -> Result<(Arc<dyn ForwardOperator>, CoefficientVector)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed(spec.seed, attempt));
    let u_dagger = match &spec.u_dagger {
        Some(u) => CoefficientVector::from_column_slice(u),
        None => sparse_vector(&mut rng, spec.n, spec.sparsity),
    };
    let operator = build_operator(spec, &mut rng)?;
    Ok((operator, u_dagger))
}

/// One draw of the problem with the given attempt index, checked for FBI
/// and the source condition.
pub fn draw_problem(spec: &ProblemSpec, attempt: usize) -> Result<ProblemInstance> {
    let (operator, u_dagger) = draw_unchecked(spec, attempt)?;
    let seed = attempt_seed(spec.seed, attempt);
    ProblemInstance::from_parts(spec.kind, operator, u_dagger, spec.penalty()?, spec.p, seed)
}

/// Draws problems until one passes the condition checks, at most
/// [`MAX_ATTEMPTS`] times.
pub fn generate_problem(spec: &ProblemSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        match draw_problem(spec, attempt) {
            Ok(instance) => return Ok(instance),
            Err(
                e @ (Error::SourceConditionViolated { .. }
                | Error::InvalidSubgradient(_)
                | Error::BoundInapplicable(_)),
            ) => last = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

/// A problem whose (generally non-sparse) `u†` satisfies the range condition
/// by construction: draw `omega`, set `xi = F'(0)^* omega` and invert the
/// subgradient formula `xi_i = q w_i |u_i|^{q-1} sgn(u_i)` coefficientwise.
/// `omega` is scaled so that `max_i |u†_i| = 1`. Needs `q > 1` and a linear
/// operator; `sparsity` is ignored.
pub fn generate_source_problem(spec: &ProblemSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let q = spec.q;
    if q <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "source-condition construction needs q > 1, got {q}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let operator = build_operator(spec, &mut rng)?;
    if !operator.is_linear() {
        return Err(Error::NotLinear);
    }
    let m = operator.output_dim();
    let omega = DataVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xi = operator.derivative_adjoint_apply(&CoefficientVector::zeros(spec.n), &omega)?;
    let weights = spec.weights.to_vec(spec.n)?;
    let invert = |x: f64, w: f64| x.signum() * (x.abs() / (q * w)).powf(1.0 / (q - 1.0));
    let raw = CoefficientVector::from_fn(spec.n, |i, _| invert(xi[i], weights[i]));
    let peak = raw.amax();
    if peak == 0.0 {
        return Err(Error::GenerationFailed {
            attempts: 1,
            reason: "F^* omega vanished".into(),
        });
    }
    // u scales like omega^(1/(q-1)); rescale omega so that max |u_i| = 1
    let factor = peak.powf(-(q - 1.0));
    let xi = xi * factor;
    let u_dagger = CoefficientVector::from_fn(spec.n, |i, _| invert(xi[i], weights[i]));
    ProblemInstance::from_parts(spec.kind, operator, u_dagger, spec.penalty()?, spec.p, spec.seed)
}

/// Problems used by several tests and the command-line reference configs.
pub fn make_diagonal_problem(n: usize, sparsity: usize, q: f64, p: u32, seed: u64) -> Result<ProblemInstance> {
    generate_problem(&ProblemSpec::new(ProblemKind::Diagonal, n, sparsity, q, p, seed))
}

/// Convenience for a dense problem from an explicit matrix and solution.
pub fn problem_from_matrix(
    matrix: DMatrix<f64>,
    u_dagger: CoefficientVector,
    spec: PenaltySpec,
    p: u32,
) -> Result<ProblemInstance> {
    let operator: Arc<dyn ForwardOperator> = Arc::new(make_dense_linear(matrix)?);
    ProblemInstance::from_parts(ProblemKind::RandomDense, operator, u_dagger, spec, p, 0)
}

/// Convenience for a diagonal problem with explicit singular values.
pub fn problem_from_diagonal(
    values: Vec<f64>,
    u_dagger: CoefficientVector,
    spec: PenaltySpec,
    p: u32,
) -> Result<ProblemInstance> {
    let operator: Arc<dyn ForwardOperator> = Arc::new(make_diagonal_linear(values)?);
    ProblemInstance::from_parts(ProblemKind::Diagonal, operator, u_dagger, spec, p, 0)
}

/// Convenience for a convolution problem with an explicit kernel.
pub fn problem_from_kernel(
    kernel: Vec<f64>,
    u_dagger: CoefficientVector,
    spec: PenaltySpec,
    p: u32,
) -> Result<ProblemInstance> {
    let n = u_dagger.len();
    let operator: Arc<dyn ForwardOperator> = Arc::new(make_convolution_linear(kernel, n)?);
    ProblemInstance::from_parts(ProblemKind::Convolution, operator, u_dagger, spec, p, 0)
}
