use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::features::FeatureMap;
use super::training::{TrainingSet, CHUNK};
use super::Estimator;
use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};

/// Number of partial sums reduced at the end of each pass. Fixed so the
/// floating-point summation order never depends on the thread count.
const GROUPS: usize = 8;

/// Sample moments of features and regressands over a training set.
#[derive(Debug, Clone)]
pub struct RffMoments {
    pub n: usize,
    pub m_x: Array1<f64>,
    pub m_z: Array1<f64>,
    /// Z×Z feature covariance `(1/N) Z̃ M Z̃ᵀ`.
    pub c_zz: Array2<f64>,
    /// Z×L cross-covariance `(1/N) Z̃ M X̃ᵀ`.
    pub c_zx: Array2<f64>,
}

fn chunk_groups(n: usize) -> Vec<Vec<(usize, usize)>> {
    let chunks: Vec<(usize, usize)> = (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect();
    let per = chunks.len().div_ceil(GROUPS).max(1);
    chunks.chunks(per).map(|g| g.to_vec()).collect()
}

impl RffMoments {
    /// Two streaming passes over `ts`: means first, then centered products.
    /// Peak memory is O(Z² + CHUNK·Z); the N×Z feature matrix is never formed.
    pub fn accumulate(ts: &TrainingSet, fm: &FeatureMap) -> Result<Self> {
        Error::check_len(fm.regressor_dim(), ts.regressor_dim())?;
        let n = ts.len();
        let z = fm.n_features();
        let l = ts.regressands.nrows();
        let groups = chunk_groups(n);

        let sums: Vec<Array1<f64>> = groups
            .par_iter()
            .map(|g| {
                let mut acc = Array1::zeros(z);
                for &(a, b) in g {
                    let f = fm.featurize_batch(ts.regressors.slice(s![.., a..b]))?;
                    acc += &f.sum_axis(Axis(0));
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut m_z = Array1::zeros(z);
        for part in &sums {
            m_z += part;
        }
        m_z /= n as f64;
        let m_x = ts.regressands.mean_axis(Axis(1)).expect("nonempty");

        let parts: Vec<(Array2<f64>, Array2<f64>)> = groups
            .par_iter()
            .map(|g| {
                let mut czz = Array2::zeros((z, z));
                let mut czx = Array2::zeros((z, l));
                for &(a, b) in g {
                    let mut f = fm.featurize_batch(ts.regressors.slice(s![.., a..b]))?;
                    for mut row in f.rows_mut() {
                        row -= &m_z;
                    }
                    let mut x = ts.regressands.slice(s![.., a..b]).t().to_owned();
                    for mut row in x.rows_mut() {
                        row -= &m_x;
                    }
                    general_mat_mul(1.0, &f.t(), &f, 1.0, &mut czz);
                    general_mat_mul(1.0, &f.t(), &x, 1.0, &mut czx);
                }
                Ok((czz, czx))
            })
            .collect::<Result<_>>()?;
        let mut c_zz = Array2::zeros((z, z));
        let mut c_zx = Array2::zeros((z, l));
        for (a, b) in &parts {
            c_zz += a;
            c_zx += b;
        }
        c_zz /= n as f64;
        c_zx /= n as f64;
        linalg::symmetrize(&mut c_zz);
        Ok(RffMoments { n, m_x, m_z, c_zz, c_zx })
    }

    /// Factors `C_zz + ρI` and returns the resulting estimator.
    pub fn solve(&self, fm: &FeatureMap, rho: f64) -> Result<RffPerk> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("regularization must be positive, got {rho}")));
        }
        Error::check_len(fm.n_features(), self.m_z.len())?;
        let mut a = self.c_zz.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += rho;
        }
        let weights = match Cholesky::new(a.view()) {
            Ok(chol) => chol.solve_matrix(self.c_zx.view()),
            Err(e) => {
                log::warn!("C_zz + rho I with rho = {rho:e}: {e}");
                linalg::solve_symmetric(a.view(), self.c_zx.view())?.0
            }
        };
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numerical(format!("non-finite weights at rho = {rho:e}")));
        }
        Ok(RffPerk { features: fm.clone(), m_x: self.m_x.clone(), m_z: self.m_z.clone(), weights, rho })
    }
}

/// Random-feature kernel regression,
/// `x̂(p) = m_x + Wᵀ(z̃(p) − m_z)` with `W = (C_zz + ρI)⁻¹ c_zx`.
///
/// The weights are solved once at training time, so prediction is one
/// featurization and one Z×L product per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct RffPerk {
    pub features: FeatureMap,
    pub m_x: Array1<f64>,
    pub m_z: Array1<f64>,
    /// Z×L.
    pub weights: Array2<f64>,
    pub rho: f64,
}

pub fn train_rff(ts: &TrainingSet, fm: &FeatureMap, rho: f64) -> Result<RffPerk> {
    RffMoments::accumulate(ts, fm)?.solve(fm, rho)
}

impl RffPerk {
    /// Predicts from precomputed features (length Z).
    pub fn predict_features(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_len(self.m_z.len(), z.len())?;
        Ok(&self.m_x + &self.weights.t().dot(&(&z - &self.m_z)))
    }
}

impl Estimator for RffPerk {
    fn regressor_dim(&self) -> usize {
        self.features.regressor_dim()
    }

    fn latent_dim(&self) -> usize {
        self.m_x.len()
    }

    fn predict(&self, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let z = self.features.featurize(p)?;
        self.predict_features(z.view())
    }

    fn predict_batch(&self, p: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Error::check_len(self.regressor_dim(), p.nrows())?;
        let t = p.ncols();
        let bias = &self.m_x - &self.weights.t().dot(&self.m_z);
        let starts: Vec<usize> = (0..t).step_by(CHUNK).collect();
        let blocks: Vec<Array2<f64>> = starts
            .par_iter()
            .map(|&a| {
                let b = (a + CHUNK).min(t);
                let f = self.features.featurize_batch(p.slice(s![.., a..b]))?;
                Ok(self.weights.t().dot(&f.t()))
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((self.latent_dim(), t));
        for (&a, blk) in starts.iter().zip(&blocks) {
            out.slice_mut(s![.., a..a + blk.ncols()]).assign(blk);
        }
        for mut col in out.columns_mut() {
            col += &bias;
        }
        Ok(out)
    }
}
