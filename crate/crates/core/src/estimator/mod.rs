//! Kernel regression estimators trained on simulated data.
//!
//! [`ExactPerk`] solves the regularized problem in Gram form and is limited
//! to small training sets. [`RffPerk`] replaces the kernel with random
//! Fourier features and only ever stores Z×Z moments, which is the path used
//! for full-size training.

mod exact;
mod features;
mod kernel;
mod map;
mod rff;
mod training;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use exact::{train_exact, train_exact_capped, ExactPerk, EXACT_N_CAP};
pub use features::{rff_draw, FeatureMap};
pub use kernel::{bandwidth_from_test_data, gaussian_kernel, Kernel, KernelConfig};
pub use map::{masked_regressors, predict_map};
pub use rff::{train_rff, RffMoments, RffPerk};
pub use training::{generate_training_set, noisy_magnitudes, TrainingSet};

/// A trained map from regressors `p` (length P) to latent estimates (length L).
pub trait Estimator: Sync {
    fn regressor_dim(&self) -> usize;

    fn latent_dim(&self) -> usize;

    fn predict(&self, p: ArrayView1<'_, f64>) -> Result<Array1<f64>>;

    /// Predicts every column of `p` (P×T), returning L×T.
    fn predict_batch(&self, p: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Error::check_len(self.regressor_dim(), p.nrows())?;
        let cols: Vec<Array1<f64>> =
            (0..p.ncols()).into_par_iter().map(|j| self.predict(p.column(j))).collect::<Result<_>>()?;
        let mut out = Array2::zeros((self.latent_dim(), cols.len()));
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).assign(c);
        }
        Ok(out)
    }
}
