use nalgebra::DMatrix;

use super::{check_dim, ForwardOperator};
use crate::{CoefficientVector, DataVector, Error, Result};

/// `F(u) = A u` for a dense matrix `A`.
#[derive(Debug, Clone)]
pub struct DenseLinear {
    matrix: DMatrix<f64>,
}

impl DenseLinear {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator matrix"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardOperator for DenseLinear {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector> {
        check_dim(self.input_dim(), u.len())?;
        Ok(&self.matrix * u)
    }

    fn derivative_apply(&self, _at: &CoefficientVector, h: &CoefficientVector) -> Result<DataVector> {
        self.apply(h)
    }

    fn derivative_adjoint_apply(
        &self,
        _at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector> {
        check_dim(self.output_dim(), y.len())?;
        Ok(self.matrix.tr_mul(y))
    }
}
