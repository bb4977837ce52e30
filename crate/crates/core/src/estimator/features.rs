use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::kernel::{Kernel, KernelConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Random Fourier feature map `z̃(p) = √(2/Z)·cos(2π(Vp + s))`.
///
/// Frequencies are stored as standard normal draws and divided by `2πΛ_ii`
/// on use, so maps drawn with the same seed for different `λ` share their
/// underlying randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// Z×P frequencies `v`, row `j` for feature `j`.
    pub freqs: Array2<f64>,
    /// Z phases in `[0, 1)`.
    pub phases: Array1<f64>,
    pub kernel: KernelConfig,
    pub seed: u64,
}

/// Draws `z` features for the Gaussian kernel `cfg`.
pub fn rff_draw(cfg: &KernelConfig, z: usize, seed: u64) -> Result<FeatureMap> {
    if z == 0 {
        return Err(Error::invalid("feature count Z must be at least 1"));
    }
    let p = cfg.dim();
    let mut rng_v = rng::stream(seed, 0);
    let mut rng_s = rng::stream(seed, 1);
    let mut freqs = Array2::zeros((z, p));
    for mut row in freqs.rows_mut() {
        for (v, w) in row.iter_mut().zip(&cfg.bandwidth) {
            let g: f64 = rng_v.sample(StandardNormal);
            *v = g / (2.0 * PI * w);
        }
    }
    let phases = (0..z).map(|_| rng_s.random::<f64>()).collect();
    Ok(FeatureMap { freqs, phases, kernel: cfg.clone(), seed })
}

impl FeatureMap {
    pub fn n_features(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn regressor_dim(&self) -> usize {
        self.freqs.ncols()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.n_features() as f64).sqrt()
    }

    /// Features of a single regressor.
    pub fn featurize(&self, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_len(self.regressor_dim(), p.len())?;
        let c = self.scale();
        let mut z = self.freqs.dot(&p);
        z.zip_mut_with(&self.phases, |a, s| *a = c * (2.0 * PI * (*a + s)).cos());
        Ok(z)
    }

    /// Features of the columns of `p` (P×n), returned one row per column (n×Z).
    pub fn featurize_batch(&self, p: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Error::check_len(self.regressor_dim(), p.nrows())?;
        let c = self.scale();
        let mut z = p.t().dot(&self.freqs.t());
        for mut row in z.axis_iter_mut(Axis(0)) {
            row.zip_mut_with(&self.phases, |a, s| *a = c * (2.0 * PI * (*a + s)).cos());
        }
        Ok(z)
    }
}

impl Kernel for FeatureMap {
    fn dim(&self) -> usize {
        self.regressor_dim()
    }

    /// `⟨z̃(p), z̃(q)⟩`, the Monte Carlo approximation of the Gaussian kernel.
    fn eval(&self, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
        let a = self.featurize(p).expect("regressor dimension");
        let b = self.featurize(q).expect("regressor dimension");
        a.dot(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn draw_is_reproducible() {
        let cfg = KernelConfig::new(1.0, vec![1.0, 2.0]).unwrap();
        let a = rff_draw(&cfg, 50, 4).unwrap();
        assert_eq!(a, rff_draw(&cfg, 50, 4).unwrap());
        assert_ne!(a.freqs, rff_draw(&cfg, 50, 5).unwrap().freqs);
        assert!(a.phases.iter().all(|s| (0.0..1.0).contains(s)));
        assert!(rff_draw(&cfg, 0, 4).is_err());
    }

    #[test]
    fn frequency_std_matches_bandwidth() {
        let cfg = KernelConfig::new(1.0, vec![1.0]).unwrap();
        let fm = rff_draw(&cfg, 100_000, 1).unwrap();
        let v = fm.freqs.column(0);
        let mean = v.mean().unwrap();
        let std = (v.mapv(|x| (x - mean).powi(2)).sum() / (v.len() - 1) as f64).sqrt();
        let target = 1.0 / (2.0 * PI);
        assert!((std / target - 1.0).abs() < 0.02, "{std} vs {target}");
    }

    #[test]
    fn featurize_bounds_and_zero_phase() {
        let cfg = KernelConfig::new(1.0, vec![0.5, 0.5, 1.0]).unwrap();
        let mut fm = rff_draw(&cfg, 64, 2).unwrap();
        let z = fm.featurize(array![0.3, -1.0, 2.0].view()).unwrap();
        let bound = (2.0 / 64.0f64).sqrt();
        assert!(z.iter().all(|v| v.abs() <= bound + 1e-15));
        assert!(z.dot(&z) <= 2.0 + 1e-12);

        fm.phases.fill(0.0);
        let z0 = fm.featurize(array![0.0, 0.0, 0.0].view()).unwrap();
        assert!(z0.iter().all(|v| (v - bound).abs() < 1e-15));
        assert!(fm.featurize(array![0.0].view()).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let cfg = KernelConfig::new(1.0, vec![0.5, 2.0]).unwrap();
        let fm = rff_draw(&cfg, 32, 3).unwrap();
        let p = array![[0.1, 0.7, -0.3], [1.0, 2.0, 3.0]];
        let batch = fm.featurize_batch(p.view()).unwrap();
        for (j, col) in p.columns().into_iter().enumerate() {
            let single = fm.featurize(col).unwrap();
            for (a, b) in single.iter().zip(batch.row(j)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
