use nalgebra::DMatrix;

use super::{check_dim, ForwardOperator};
use crate::{CoefficientVector, DataVector, Error, Result};

/// `F(u) = A u + eps B (u ⊙ u)` with derivative `F'(u) h = A h + 2 eps B (u ⊙ h)`
/// and adjoint `F'(u)^* y = A^T y + 2 eps u ⊙ (B^T y)`.
#[derive(Debug, Clone)]
pub struct ToyNonlinear {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    eps: f64,
}

impl ToyNonlinear {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, eps: f64) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::InvalidOperator(format!(
                "A is {:?} but B is {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if !eps.is_finite() || a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("toy nonlinear operator"));
        }
        Ok(Self { a, b, eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl ForwardOperator for ToyNonlinear {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn is_linear(&self) -> bool {
        self.eps == 0.0
    }

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector> {
        check_dim(self.input_dim(), u.len())?;
        Ok(&self.a * u + (&self.b * u.component_mul(u)) * self.eps)
    }

    fn derivative_apply(&self, at: &CoefficientVector, h: &CoefficientVector) -> Result<DataVector> {
        check_dim(self.input_dim(), at.len())?;
        check_dim(self.input_dim(), h.len())?;
        Ok(&self.a * h + (&self.b * at.component_mul(h)) * (2.0 * self.eps))
    }

    fn derivative_adjoint_apply(
        &self,
        at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector> {
        check_dim(self.input_dim(), at.len())?;
        check_dim(self.output_dim(), y.len())?;
        Ok(self.a.tr_mul(y) + at.component_mul(&self.b.tr_mul(y)) * (2.0 * self.eps))
    }
}
