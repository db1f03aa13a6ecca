use super::{check_dim, ForwardOperator};
use crate::{CoefficientVector, DataVector, Error, Result};

/// Square diagonal operator `u_i -> s_i u_i`: the singular value model of a
/// compact operator in its own singular basis.
#[derive(Debug, Clone)]
pub struct DiagonalLinear {
    values: CoefficientVector,
}

impl DiagonalLinear {
    pub fn new(singular_values: Vec<f64>) -> Result<Self> {
        if let Some((i, s)) = singular_values
            .iter()
            .enumerate()
            .find(|(_, &s)| !(s.is_finite() && s > 0.0))
        {
            return Err(Error::InvalidOperator(format!(
                "singular value s_{i} = {s} is not positive"
            )));
        }
        Ok(Self {
            values: CoefficientVector::from_vec(singular_values),
        })
    }

    /// `s_i = (i + 1)^{-decay}` for `i = 0..n`.
    pub fn power_decay(n: usize, decay: f64) -> Result<Self> {
        Self::new((0..n).map(|i| ((i + 1) as f64).powf(-decay)).collect())
    }

    pub fn values(&self) -> &CoefficientVector {
        &self.values
    }

    /// `max s_i / min s_i`.
    pub fn condition_number(&self) -> f64 {
        self.values.max() / self.values.min()
    }
}

impl ForwardOperator for DiagonalLinear {
    fn input_dim(&self) -> usize {
        self.values.len()
    }

    fn output_dim(&self) -> usize {
        self.values.len()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector> {
        check_dim(self.values.len(), u.len())?;
        Ok(self.values.component_mul(u))
    }

    fn derivative_apply(&self, _at: &CoefficientVector, h: &CoefficientVector) -> Result<DataVector> {
        self.apply(h)
    }

    fn derivative_adjoint_apply(
        &self,
        _at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector> {
        self.apply(y)
    }
}
