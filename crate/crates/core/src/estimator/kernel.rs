use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive-definite kernel on regressor space.
pub trait Kernel: Sync {
    /// Regressor dimension `P`.
    fn dim(&self) -> usize;

    fn eval(&self, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64;
}

/// Gaussian kernel with diagonal bandwidth `Λ`.
///
/// `bandwidth[i]` is `Λ_ii` and already includes the scale `lambda`. A
/// diagonal `Λ` is automatically block diagonal between the magnitude and
/// known-parameter coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lambda: f64,
    pub bandwidth: Vec<f64>,
}

impl KernelConfig {
    pub fn new(lambda: f64, bandwidth: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("bandwidth scale must be positive, got {lambda}")));
        }
        if bandwidth.is_empty() || bandwidth.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::invalid(format!("bandwidth entries must be positive: {bandwidth:?}")));
        }
        Ok(KernelConfig { lambda, bandwidth })
    }

    /// Rescales to a different `lambda`, keeping the per-coordinate means.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let base = self.bandwidth.iter().map(|b| b / self.lambda * lambda).collect();
        KernelConfig::new(lambda, base)
    }
}

impl Kernel for KernelConfig {
    fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    fn eval(&self, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
        let mut e = 0.0;
        for ((a, b), w) in p.iter().zip(q.iter()).zip(&self.bandwidth) {
            let t = (a - b) / w;
            e += t * t;
        }
        (-0.5 * e).exp()
    }
}

/// `exp(-½ Σ ((p_i - p'_i)/Λ_ii)²)`.
pub fn gaussian_kernel(p: &[f64], q: &[f64], cfg: &KernelConfig) -> Result<f64> {
    Error::check_len(cfg.dim(), p.len())?;
    Error::check_len(cfg.dim(), q.len())?;
    Ok(cfg.eval(ArrayView1::from(p), ArrayView1::from(q)))
}

/// `Λ = λ·diag(m_|y|, m_ν)` from per-voxel test regressors.
///
/// `magnitudes` is D×V and `known` is K×V over the V voxels of the test mask.
pub fn bandwidth_from_test_data(
    magnitudes: ArrayView2<'_, f64>,
    known: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<KernelConfig> {
    if magnitudes.ncols() == 0 {
        return Err(Error::invalid("bandwidth needs at least one test voxel"));
    }
    Error::check_len(magnitudes.ncols(), known.ncols())?;
    let means: Vec<f64> = magnitudes.mean_axis(Axis(1)).into_iter().chain(known.mean_axis(Axis(1))).flatten().collect();
    if let Some(i) = means.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::invalid(format!("degenerate bandwidth: sample mean of regressor {i} is {}", means[i])));
    }
    KernelConfig::new(lambda, means.into_iter().map(|m| lambda * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn kernel_examples() {
        let cfg = KernelConfig::new(1.0, vec![2.0]).unwrap();
        assert_eq!(gaussian_kernel(&[3.0], &[3.0], &cfg).unwrap(), 1.0);
        let k = gaussian_kernel(&[1.0], &[3.0], &cfg).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        let wide = KernelConfig::new(1.0, vec![1e300]).unwrap();
        assert_eq!(gaussian_kernel(&[1.0], &[-5.0], &wide).unwrap(), 1.0);
        assert!(gaussian_kernel(&[1.0, 2.0], &[1.0], &cfg).is_err());
    }

    #[test]
    fn bandwidth_examples() {
        let ones = Array2::ones((4, 10));
        let kappa = Array2::ones((1, 10));
        let cfg = bandwidth_from_test_data(ones.view(), kappa.view(), 1.0).unwrap();
        assert_eq!(cfg.bandwidth, vec![1.0; 5]);

        let data = array![[1.0, 3.0], [2.0, 2.0]];
        let k = array![[0.9, 1.1]];
        let a = bandwidth_from_test_data(data.view(), k.view(), 2f64.powf(0.6)).unwrap();
        let scaled = &data * 3.0;
        let b = bandwidth_from_test_data(scaled.view(), k.view(), 2f64.powf(0.6)).unwrap();
        for i in 0..2 {
            assert!((b.bandwidth[i] - 3.0 * a.bandwidth[i]).abs() < 1e-12);
        }
        assert_eq!(a.bandwidth[2], b.bandwidth[2]);

        let zero = Array2::zeros((1, 3));
        assert!(bandwidth_from_test_data(zero.view(), Array2::ones((1, 3)).view(), 1.0).is_err());
    }
}
