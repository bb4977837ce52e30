use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::kernel::Kernel;
use super::training::TrainingSet;
use super::Estimator;
use crate::error::{Error, Result};
use crate::linalg;

/// Default limit on the training-set size for Gram-form training.
pub const EXACT_N_CAP: usize = 20_000;

/// Kernel regression in Gram form: `x̂(p) = b + R·k_p` with
/// `(k_p)_n = k(p, p_n)` and row `l` of `R` equal to
/// `x̃_lᵀ M (M K M + N ρ_l I)⁻¹`.
///
/// The offset `b = m_x − R K 1 / N` makes this the exact kernel counterpart of
/// the feature-space estimator: with `K = Z̃ᵀZ̃` both give identical
/// predictions.
#[derive(Debug, Clone)]
pub struct ExactPerk<K> {
    pub kernel: K,
    /// P×N training regressors.
    pub train_regressors: Array2<f64>,
    /// L×N coefficient matrix `R`.
    pub coef: Array2<f64>,
    pub offset: Array1<f64>,
    pub m_x: Array1<f64>,
    pub rho: Vec<f64>,
}

/// Trains with the default size cap.
pub fn train_exact<K: Kernel + Clone>(ts: &TrainingSet, kernel: &K, rho_per_l: &[f64]) -> Result<ExactPerk<K>> {
    train_exact_capped(ts, kernel, rho_per_l, EXACT_N_CAP)
}

pub fn train_exact_capped<K: Kernel + Clone>(
    ts: &TrainingSet,
    kernel: &K,
    rho_per_l: &[f64],
    cap: usize,
) -> Result<ExactPerk<K>> {
    let n = ts.len();
    let l = ts.regressands.nrows();
    if n > cap {
        return Err(Error::invalid(format!("exact training needs N <= {cap}, got {n}")));
    }
    Error::check_len(kernel.dim(), ts.regressor_dim())?;
    Error::check_len(l, rho_per_l.len())?;
    if let Some(r) = rho_per_l.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("regularization must be positive, got {r}")));
    }

    let p = &ts.regressors;
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (0..n).map(|j| kernel.eval(p.column(i), p.column(j))).collect()).collect();
    let mut gram = Array2::zeros((n, n));
    for (i, r) in rows.into_iter().enumerate() {
        gram.row_mut(i).assign(&Array1::from(r));
    }
    let nf = n as f64;
    let col_mean = gram.mean_axis(Axis(0)).expect("nonempty");
    let grand = col_mean.mean().expect("nonempty");
    let mut centered = gram.clone();
    for i in 0..n {
        for j in 0..n {
            centered[[i, j]] += grand - col_mean[i] - col_mean[j];
        }
    }
    linalg::symmetrize(&mut centered);

    let m_x = ts.regressands.mean_axis(Axis(1)).expect("nonempty");
    let mut xc = ts.regressands.t().to_owned();
    for mut row in xc.rows_mut() {
        row -= &m_x;
    }

    // Group latent components sharing a ρ so each distinct system is solved once.
    let mut coef = Array2::zeros((l, n));
    let mut done = vec![false; l];
    for li in 0..l {
        if done[li] {
            continue;
        }
        let rho = rho_per_l[li];
        let group: Vec<usize> = (li..l).filter(|&k| rho_per_l[k] == rho).collect();
        let mut a = centered.clone();
        for i in 0..n {
            a[[i, i]] += nf * rho;
        }
        let rhs = xc.select(Axis(1), &group);
        let (sol, fallback) = linalg::solve_symmetric(a.view(), rhs.view())?;
        if fallback {
            log::warn!("Gram system at rho = {rho:e} is not numerically positive definite");
        }
        for (c, &k) in group.iter().enumerate() {
            coef.row_mut(k).assign(&sol.column(c));
            done[k] = true;
        }
    }
    let offset = &m_x - &coef.dot(&col_mean);
    Ok(ExactPerk { kernel: kernel.clone(), train_regressors: p.clone(), coef, offset, m_x, rho: rho_per_l.to_vec() })
}

impl<K: Kernel> ExactPerk<K> {
    pub fn n_train(&self) -> usize {
        self.train_regressors.ncols()
    }

    /// `(k_p)_n = k(p, p_n)`.
    pub fn kernel_vector(&self, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_len(self.kernel.dim(), p.len())?;
        Ok(self.train_regressors.axis_iter(Axis(1)).map(|q| self.kernel.eval(p, q)).collect())
    }

    /// `b + R k` for a given (possibly expected) kernel vector.
    pub fn predict_from_kernel_vector(&self, k: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_len(self.n_train(), k.len())?;
        Ok(&self.offset + &self.coef.dot(&k))
    }
}

impl<K: Kernel> Estimator for ExactPerk<K> {
    fn regressor_dim(&self) -> usize {
        self.kernel.dim()
    }

    fn latent_dim(&self) -> usize {
        self.coef.nrows()
    }

    fn predict(&self, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let k = self.kernel_vector(p)?;
        self.predict_from_kernel_vector(k.view())
    }
}

/// Dense evaluation of the Gram-form estimator used as an independent check.
#[cfg(test)]
pub(crate) fn reference_exact_prediction(
    gram: ndarray::ArrayView2<'_, f64>,
    x: ndarray::ArrayView2<'_, f64>,
    kp: ArrayView1<'_, f64>,
    rho: f64,
) -> Array1<f64> {
    let n = gram.nrows();
    let nf = n as f64;
    let m = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 } - 1.0 / nf);
    let mut a = m.dot(&gram).dot(&m);
    for i in 0..n {
        a[[i, i]] += nf * rho;
    }
    let lu = linalg::Lu::new(a.view()).unwrap();
    let m_x = x.mean_axis(Axis(1)).unwrap();
    let ones = Array1::from_elem(n, 1.0 / nf);
    let kbar = gram.dot(&ones);
    let mut out = m_x.clone();
    for l in 0..x.nrows() {
        let mx = m.dot(&x.row(l));
        let w = lu.solve(mx.view());
        out[l] += w.dot(&(&kp - &kbar));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::kernel::KernelConfig;
    use crate::signal::NoiseModel;
    use ndarray::array;

    fn small_set() -> TrainingSet {
        let x = array![[1.0, 2.0, 4.0], [10.0, 30.0, 20.0], [0.5, 0.25, 0.125]];
        let p = array![[0.1, 0.5, 0.9], [1.0, 0.8, 1.1]];
        TrainingSet::new(x, p, NoiseModel::noiseless(1), 0).unwrap()
    }

    #[test]
    fn single_training_point_predicts_it() {
        let ts = TrainingSet::new(array![[2.0], [3.0], [4.0]], array![[0.5]], NoiseModel::noiseless(1), 0).unwrap();
        let cfg = KernelConfig::new(1.0, vec![1.0]).unwrap();
        let est = train_exact(&ts, &cfg, &[1e-3; 3]).unwrap();
        for p in [-3.0, 0.5, 10.0] {
            assert_eq!(est.predict(array![p].view()).unwrap(), array![2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn constant_regressand_predicts_constant() {
        let mut ts = small_set();
        ts.regressands.row_mut(1).fill(7.0);
        let cfg = KernelConfig::new(1.0, vec![0.3, 0.3]).unwrap();
        let est = train_exact(&ts, &cfg, &[1e-4; 3]).unwrap();
        let y = est.predict(array![0.4, 0.9].view()).unwrap();
        assert!((y[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_reference() {
        let ts = small_set();
        let cfg = KernelConfig::new(1.0, vec![0.3, 0.4]).unwrap();
        let rho = 1e-2;
        let est = train_exact(&ts, &cfg, &[rho; 3]).unwrap();
        let gram = Array2::from_shape_fn((3, 3), |(i, j)| cfg.eval(ts.regressors.column(i), ts.regressors.column(j)));
        for q in [array![0.2, 1.0], array![0.7, 0.85]] {
            let kp = est.kernel_vector(q.view()).unwrap();
            let want = reference_exact_prediction(gram.view(), ts.regressands.view(), kp.view(), rho);
            let got = est.predict(q.view()).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn far_point_predicts_offset() {
        let ts = small_set();
        let cfg = KernelConfig::new(1.0, vec![0.1, 0.1]).unwrap();
        let est = train_exact(&ts, &cfg, &[1e-3, 1e-2, 1e-3]).unwrap();
        let y = est.predict(array![100.0, 100.0].view()).unwrap();
        assert_eq!(y, est.offset);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ts = small_set();
        let cfg = KernelConfig::new(1.0, vec![0.3, 0.3]).unwrap();
        assert!(train_exact(&ts, &cfg, &[1e-3; 2]).is_err());
        assert!(train_exact(&ts, &cfg, &[0.0; 3]).is_err());
        assert!(train_exact_capped(&ts, &cfg, &[1e-3; 3], 2).is_err());
        let est = train_exact(&ts, &cfg, &[1e-3; 3]).unwrap();
        assert!(est.predict(array![1.0].view()).is_err());
    }
}
