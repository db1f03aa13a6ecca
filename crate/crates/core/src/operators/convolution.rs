use super::{check_dim, ForwardOperator};
use crate::{CoefficientVector, DataVector, Error, Result};

/// Circular convolution `y_i = sum_k kernel_k u_{(i - k) mod n}` on length-`n`
/// vectors. The adjoint is the circular correlation with the same kernel.
#[derive(Debug, Clone)]
pub struct CircularConvolution {
    kernel: Vec<f64>,
    n: usize,
}

impl CircularConvolution {
    pub fn new(kernel: Vec<f64>, n: usize) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::InvalidOperator("empty convolution kernel".into()));
        }
        if kernel.len() > n {
            return Err(Error::InvalidOperator(format!(
                "kernel length {} exceeds signal length {n}",
                kernel.len()
            )));
        }
        if kernel.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("convolution kernel"));
        }
        Ok(Self { kernel, n })
    }

    /// Sampled Gaussian `exp(-k^2 / (2 width^2))` for `|k| <= 3 width`,
    /// normalized to unit sum and stored causally (shifted by its radius).
    pub fn gaussian(width: f64, n: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidOperator(format!("kernel width {width}")));
        }
        let radius = (3.0 * width).ceil() as i64;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-((k * k) as f64) / (2.0 * width * width)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        Self::new(kernel, n)
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

impl ForwardOperator for CircularConvolution {
    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.n
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, u: &CoefficientVector) -> Result<DataVector> {
        check_dim(self.n, u.len())?;
        let n = self.n;
        Ok(DataVector::from_fn(n, |i, _| {
            self.kernel
                .iter()
                .enumerate()
                .map(|(k, &c)| c * u[(i + n - k) % n])
                .sum()
        }))
    }

    fn derivative_apply(&self, _at: &CoefficientVector, h: &CoefficientVector) -> Result<DataVector> {
        self.apply(h)
    }

    fn derivative_adjoint_apply(
        &self,
        _at: &CoefficientVector,
        y: &DataVector,
    ) -> Result<CoefficientVector> {
        check_dim(self.n, y.len())?;
        let n = self.n;
        Ok(CoefficientVector::from_fn(n, |j, _| {
            self.kernel
                .iter()
                .enumerate()
                .map(|(k, &c)| c * y[(j + k) % n])
                .sum()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let op = CircularConvolution::new(vec![1.0], 5).unwrap();
        let u = CoefficientVector::from_column_slice(&[1.0, -2.0, 3.0, 0.0, 7.0]);
        assert_eq!(op.apply(&u).unwrap(), u);
    }

    #[test]
    fn impulse_response() {
        let op = CircularConvolution::new(vec![0.5, 0.5], 4).unwrap();
        let e0 = CoefficientVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(op.apply(&e0).unwrap().as_slice(), &[0.5, 0.5, 0.0, 0.0]);
        // wrap-around
        let e3 = CoefficientVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(op.apply(&e3).unwrap().as_slice(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn rejects_bad_kernels() {
        assert!(CircularConvolution::new(vec![], 4).is_err());
        assert!(CircularConvolution::new(vec![1.0; 5], 4).is_err());
        assert!(CircularConvolution::gaussian(0.0, 16).is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let op = CircularConvolution::gaussian(3.0, 64).unwrap();
        assert_eq!(op.kernel().len(), 19);
        assert!((op.kernel().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
