//! Forward operators `F: coefficient space -> data space`.
//!
//! Every operator exposes `F(u)`, the action of the Gâteaux derivative
//! `F'(u) h`, and the action of its adjoint `F'(u)^* y`. Linear operators
//! ignore the linearization point.

mod convolution;
mod dense;
mod diagonal;
mod nonlinear;

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use convolution::CircularConvolution;
pub use dense::DenseLinear;
pub use diagonal::DiagonalLinear;
pub use nonlinear::ToyNonlinear;

use crate::{CoefficientVector, DataVector, Error, Result};

pub trait ForwardOperator: Send + Sync + std::fmt::Debug {
    /// Dimension `n` of the coefficient space.
    fn input_dim(&self) -> usize;

    /// Dimension `m` of the data space.
    fn output_dim(&self) -> usize;

    fn is_linear(&self) -> bool;

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector>;

    /// `F'(at) h`.
    fn derivative_apply(&self, at: &CoefficientVector, h: &CoefficientVector)
        -> Result<DataVector>;

    /// `F'(at)^* y`.
    fn derivative_adjoint_apply(
        &self,
        at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector>;
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

pub fn make_dense_linear(matrix: DMatrix<f64>) -> Result<DenseLinear> {
    DenseLinear::new(matrix)
}

pub fn make_diagonal_linear(singular_values: Vec<f64>) -> Result<DiagonalLinear> {
    DiagonalLinear::new(singular_values)
}

pub fn make_convolution_linear(kernel: Vec<f64>, n: usize) -> Result<CircularConvolution> {
    CircularConvolution::new(kernel, n)
}

pub fn make_toy_nonlinear(a: DMatrix<f64>, b: DMatrix<f64>, eps: f64) -> Result<ToyNonlinear> {
    ToyNonlinear::new(a, b, eps)
}

/// The linear operator `h -> F'(at) h` of a fixed linearization point.
#[derive(Debug)]
pub struct Linearization<'a> {
    op: &'a dyn ForwardOperator,
    at: CoefficientVector,
}

impl<'a> Linearization<'a> {
    pub fn new(op: &'a dyn ForwardOperator, at: CoefficientVector) -> Result<Self> {
        check_dim(op.input_dim(), at.len())?;
        Ok(Self { op, at })
    }

    pub fn point(&self) -> &CoefficientVector {
        &self.at
    }
}

impl ForwardOperator for Linearization<'_> {
    fn input_dim(&self) -> usize {
        self.op.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.op.output_dim()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector> {
        self.op.derivative_apply(&self.at, u)
    }

    fn derivative_apply(&self, _at: &CoefficientVector, h: &CoefficientVector) -> Result<DataVector> {
        self.op.derivative_apply(&self.at, h)
    }

    fn derivative_adjoint_apply(
        &self,
        _at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector> {
        self.op.derivative_adjoint_apply(&self.at, y)
    }
}

/// Dense `m x n` matrix of `F'(at)`, assembled column by column.
pub fn derivative_matrix(op: &dyn ForwardOperator, at: &CoefficientVector) -> Result<DMatrix<f64>> {
    let (m, n) = (op.output_dim(), op.input_dim());
    let mut out = DMatrix::zeros(m, n);
    let mut e = CoefficientVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        out.set_column(j, &op.derivative_apply(at, &e)?);
        e[j] = 0.0;
    }
    Ok(out)
}

const POWER_MAX_ITER: usize = 200;
const POWER_REL_TOL: f64 = 1e-10;
const POWER_SEED: u64 = 0x005e_ed0f_90e7;

/// Largest eigenvalue of `F'(at)^* F'(at)`, i.e. `||F'(at)||^2`, by power
/// iteration from a fixed pseudo-random start vector.
pub fn operator_norm_sq(op: &dyn ForwardOperator, at: &CoefficientVector) -> Result<f64> {
    let n = op.input_dim();
    check_dim(n, at.len())?;
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x = CoefficientVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    x /= x.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let y = op.derivative_adjoint_apply(at, &op.derivative_apply(at, &x)?)?;
        let next = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = y / norm;
        let change = (next - estimate).abs();
        estimate = next;
        if change <= POWER_REL_TOL * estimate.abs() {
            break;
        }
    }
    Ok(estimate)
}

/// Reads a header-free, row-major CSV matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::MatrixParse(format!("line {}: cannot parse {:?}", lineno + 1, field))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::MatrixParse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::MatrixParse(format!("line {}: non-finite entry", lineno + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MatrixParse("no rows".into()));
    }
    let (m, n) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(m, n, rows.into_iter().flatten()))
}
