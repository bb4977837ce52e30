//! Estimator analysis: Fisher information, worst-case Cramér–Rao bounds and
//! the conditional bias and covariance of the Gram-form estimator.
//!
//! The closed forms replace the Rician magnitude by a Gaussian with mean
//! `μ = sqrt(s² + σ²)` and covariance `Σ = diag(σ²)`, so they hold at
//! moderately high SNR. A Monte Carlo path is provided to check them.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{noisy_magnitudes, Estimator, ExactPerk, KernelConfig};
use crate::linalg::{self, Cholesky};
use crate::rng;
use crate::signal::{rician_mean, signal_gradient, KnownParams, LatentParams, NoiseModel, SignalModel};

/// Below this `|s_d|/σ_d` the Gaussian approximation is considered poor.
pub const HIGH_SNR_GATE: f64 = 5.0;

/// Relative eigenvalue threshold below which a Fisher matrix is singular.
const SINGULAR_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherResult {
    /// L×L Fisher information.
    pub f: Array2<f64>,
    /// Diagonal of `F⁻¹`; `+∞` where `F` is singular.
    pub crlb_diag: Array1<f64>,
    /// Ratio of extreme eigenvalues; `+∞` when singular.
    pub cond: f64,
}

impl FisherResult {
    pub fn is_singular(&self) -> bool {
        !self.cond.is_finite()
    }

    /// Square roots of the bounds.
    pub fn crlb_std(&self) -> Array1<f64> {
        self.crlb_diag.mapv(f64::sqrt)
    }
}

/// `F = Gᵀ Σ⁻¹ G` with `G = ∂s/∂x` (D×L) at `(x, ν)`.
pub fn fisher<M: SignalModel + ?Sized>(
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
) -> Result<FisherResult> {
    Error::check_len(model.n_datasets(), noise.len())?;
    if noise.sigmas.contains(&0.0) {
        return Err(Error::invalid("Fisher information needs positive noise variances"));
    }
    let g = signal_gradient(model, x, nu)?;
    let mut gw = g.clone();
    for (mut row, s) in gw.rows_mut().into_iter().zip(&noise.sigmas) {
        row /= s * s;
    }
    let mut f = g.t().dot(&gw);
    linalg::symmetrize(&mut f);
    fisher_from_matrix(f)
}

fn fisher_from_matrix(f: Array2<f64>) -> Result<FisherResult> {
    let l = f.nrows();
    let ev = linalg::symmetric_eigenvalues(f.view())?;
    let (lo, hi) = (ev[0], ev[l - 1]);
    let singular = !(hi > 0.0) || lo <= SINGULAR_RTOL * hi;
    if singular {
        return Ok(FisherResult { f, crlb_diag: Array1::from_elem(l, f64::INFINITY), cond: f64::INFINITY });
    }
    let inv = match Cholesky::new(f.view()) {
        Ok(ch) => ch.solve_matrix(Array2::eye(l).view()),
        Err(_) => return Ok(FisherResult { f, crlb_diag: Array1::from_elem(l, f64::INFINITY), cond: f64::INFINITY }),
    };
    Ok(FisherResult { crlb_diag: inv.diag().to_owned(), cond: hi / lo, f })
}

/// Worst-case summary of Fisher information over a grid.
#[derive(Debug, Clone)]
pub struct CrlbSummary {
    pub points: Vec<FisherResult>,
    /// Grid index and value of the largest condition number.
    pub worst_cond: (usize, f64),
    /// Per latent parameter: grid index and value of the largest bound.
    pub worst_crlb: Vec<(usize, f64)>,
    /// Grid indices where `F` is singular.
    pub singular: Vec<usize>,
}

/// Exhaustive minimax evaluation of the bounds over `grid`. Singular points
/// are reported, not treated as errors.
pub fn worst_case_crlb<M: SignalModel + ?Sized>(
    model: &M,
    grid: &[(LatentParams, KnownParams)],
    noise: &NoiseModel,
) -> Result<CrlbSummary> {
    if grid.is_empty() {
        return Err(Error::invalid("CRLB grid is empty"));
    }
    let points: Vec<FisherResult> =
        grid.par_iter().map(|(x, nu)| fisher(model, x, nu, noise)).collect::<Result<_>>()?;
    let l = points[0].crlb_diag.len();
    let mut worst_cond = (0, points[0].cond);
    let mut worst_crlb: Vec<(usize, f64)> = (0..l).map(|k| (0, points[0].crlb_diag[k])).collect();
    let mut singular = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.is_singular() {
            singular.push(i);
        }
        if p.cond > worst_cond.1 {
            worst_cond = (i, p.cond);
        }
        for (k, w) in worst_crlb.iter_mut().enumerate() {
            if p.crlb_diag[k] > w.1 {
                *w = (i, p.crlb_diag[k]);
            }
        }
    }
    Ok(CrlbSummary { points, worst_cond, worst_crlb, singular })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
}

/// Conditional bias and covariance of an estimator at one `(x, ν)`.
#[derive(Debug, Clone)]
pub struct BiasCovReport {
    pub bias: Array1<f64>,
    pub cov: Array2<f64>,
    pub method: Method,
    /// Standard errors of the bias entries (Monte Carlo only).
    pub bias_se: Option<Array1<f64>>,
    /// Smallest `|s_d|/σ_d` at this point.
    pub min_snr: f64,
}

/// Everything the closed forms need about one evaluation point.
struct Point {
    mu: Vec<f64>,
    /// `Λ_y⁻²` per dataset.
    a: Vec<f64>,
    var: Vec<f64>,
    /// `exp(-½‖ν − ν_n‖²_{Λ_ν⁻²})` per training point.
    known_factor: Array1<f64>,
    min_snr: f64,
}

fn prepare<M: SignalModel + ?Sized>(
    est: &ExactPerk<KernelConfig>,
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
) -> Result<Point> {
    let d = model.n_datasets();
    Error::check_len(d, noise.len())?;
    let bw = &est.kernel.bandwidth;
    if bw.len() <= d {
        return Err(Error::invalid("kernel bandwidth must cover the datasets and the known parameters"));
    }
    let s = model.signals(x, nu)?;
    let mu = rician_mean(&s, noise)?;
    let min_snr = s.iter().zip(&noise.sigmas).map(|(s, sg)| s / sg).fold(f64::INFINITY, f64::min);
    if min_snr < HIGH_SNR_GATE {
        log::warn!(
            "closed-form analysis at |s|/sigma = {min_snr:.2} < {HIGH_SNR_GATE}; Gaussian approximation is poor"
        );
    }
    let known = [nu.kappa];
    Error::check_len(bw.len() - d, known.len())?;
    let train = &est.train_regressors;
    let known_factor = (0..est.n_train())
        .map(|n| {
            let e: f64 = known.iter().enumerate().map(|(k, v)| ((v - train[[d + k, n]]) / bw[d + k]).powi(2)).sum();
            (-0.5 * e).exp()
        })
        .collect();
    Ok(Point {
        mu,
        a: bw[..d].iter().map(|w| 1.0 / (w * w)).collect(),
        var: noise.sigmas.iter().map(|s| s * s).collect(),
        known_factor,
        min_snr,
    })
}

fn expected_kernel(est: &ExactPerk<KernelConfig>, pt: &Point) -> Array1<f64> {
    let train = &est.train_regressors;
    let log_det: f64 = pt.a.iter().zip(&pt.var).map(|(a, v)| (a * v).ln_1p()).sum();
    (0..est.n_train())
        .map(|n| {
            let mut e = 0.0;
            for (dd, ((mu, a), v)) in pt.mu.iter().zip(&pt.a).zip(&pt.var).enumerate() {
                let y = mu - train[[dd, n]];
                e += a * y * y / (1.0 + a * v);
            }
            pt.known_factor[n] * (-0.5 * e - 0.5 * log_det).exp()
        })
        .collect()
}

/// `E[k(α, ν)]` over Gaussian measurements `α ~ N(μ, Σ)`, entry by entry:
/// `exp(−½(‖ν−ν_n‖²_{Λ_ν⁻²} + Σ_d a_d ỹ_nd²/(1 + a_d σ_d²))) / sqrt(Π_d (1 + a_d σ_d²))`
/// with `a_d = Λ_{y,d}⁻²` and `ỹ_n = μ − α_n`.
pub fn expected_kernel_vector<M: SignalModel + ?Sized>(
    est: &ExactPerk<KernelConfig>,
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
) -> Result<Array1<f64>> {
    let pt = prepare(est, model, x, nu, noise)?;
    Ok(expected_kernel(est, &pt))
}

/// Covariance of the kernel vector, `E[k̃k̃ᵀ]` with `k̃ = k − E[k]`.
///
/// Written as `T₂·expm1(log T₁ − log T₂)` where `T₁ = E[k_n k_n']` and
/// `T₂ = E[k_n]E[k_n']`; the exponent difference is formed from
/// `Δ₀ − Δ₁` and `Δ₂ − Δ₁` directly, so it vanishes exactly at `Σ = 0`.
fn kernel_covariance(est: &ExactPerk<KernelConfig>, pt: &Point, ek: &Array1<f64>) -> Array2<f64> {
    let n = est.n_train();
    let d = pt.mu.len();
    let train = &est.train_regressors;
    let y: Vec<Vec<f64>> = (0..n).map(|j| (0..d).map(|dd| pt.mu[dd] - train[[dd, j]]).collect()).collect();
    // per-dataset coefficients
    let minus: Vec<f64> = (0..d)
        .map(|k| {
            let av = pt.a[k] * pt.var[k];
            0.5 * pt.a[k] * av / (1.0 + av)
        })
        .collect();
    let plus: Vec<f64> = (0..d)
        .map(|k| {
            let av = pt.a[k] * pt.var[k];
            -0.5 * pt.a[k] * av / ((1.0 + 2.0 * av) * (1.0 + av))
        })
        .collect();
    let log_det: f64 = (0..d)
        .map(|k| {
            let av = pt.a[k] * pt.var[k];
            0.5 * (av * av / (1.0 + 2.0 * av)).ln_1p()
        })
        .sum();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut e = 0.0;
                    for k in 0..d {
                        let u = y[i][k] - y[j][k];
                        let v = y[i][k] + y[j][k];
                        e += u * u * minus[k] + v * v * plus[k];
                    }
                    ek[i] * ek[j] * (-0.5 * e + log_det).exp_m1()
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&Array1::from(r));
    }
    out
}

/// Closed-form conditional bias `R E[k] + (b − x)`.
pub fn conditional_bias<M: SignalModel + ?Sized>(
    est: &ExactPerk<KernelConfig>,
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
) -> Result<BiasCovReport> {
    let pt = prepare(est, model, x, nu, noise)?;
    let ek = expected_kernel(est, &pt);
    let bias = est.predict_from_kernel_vector(ek.view())? - Array1::from(x.to_array().to_vec());
    let l = bias.len();
    Ok(BiasCovReport {
        bias,
        cov: Array2::zeros((l, l)),
        method: Method::ClosedForm,
        bias_se: None,
        min_snr: pt.min_snr,
    })
}

/// Closed-form conditional covariance `R E[k̃k̃ᵀ] Rᵀ`, with the bias as well.
pub fn conditional_cov<M: SignalModel + ?Sized>(
    est: &ExactPerk<KernelConfig>,
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
) -> Result<BiasCovReport> {
    let pt = prepare(est, model, x, nu, noise)?;
    let ek = expected_kernel(est, &pt);
    let bias = est.predict_from_kernel_vector(ek.view())? - Array1::from(x.to_array().to_vec());
    let kk = kernel_covariance(est, &pt, &ek);
    let mut cov = est.coef.dot(&kk).dot(&est.coef.t());
    linalg::symmetrize(&mut cov);
    Ok(BiasCovReport { bias, cov, method: Method::ClosedForm, bias_se: None, min_snr: pt.min_snr })
}

/// Trials simulated per random stream.
const MC_CHUNK: usize = 8192;

/// Running mean and centered second moment, merged pairwise.
struct Moments {
    n: f64,
    mean: Array1<f64>,
    m2: Array2<f64>,
}

impl Moments {
    fn new(l: usize) -> Self {
        Moments { n: 0.0, mean: Array1::zeros(l), m2: Array2::zeros((l, l)) }
    }

    fn push(&mut self, v: ArrayView1<'_, f64>) {
        self.n += 1.0;
        let delta = &v - &self.mean;
        self.mean.scaled_add(1.0 / self.n, &delta);
        let delta2 = &v - &self.mean;
        for i in 0..delta.len() {
            for j in 0..delta.len() {
                self.m2[[i, j]] += delta[i] * delta2[j];
            }
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = &other.mean - &self.mean;
        for i in 0..delta.len() {
            for j in 0..delta.len() {
                self.m2[[i, j]] += other.m2[[i, j]] + delta[i] * delta[j] * self.n * other.n / n;
            }
        }
        self.mean.scaled_add(other.n / n, &delta);
        self.n = n;
        self
    }
}

/// Empirical bias and covariance of `est` over `trials` noisy measurements
/// at `(x, ν)`. Chunk `c` of trials uses random stream `c` of `seed`, and
/// chunk moments are merged in chunk order.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_bias_cov<E: Estimator + ?Sized, M: SignalModel + ?Sized>(
    est: &E,
    model: &M,
    x: &LatentParams,
    nu: &KnownParams,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
) -> Result<BiasCovReport> {
    if trials == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one trial"));
    }
    let d = model.n_datasets();
    Error::check_len(d, noise.len())?;
    Error::check_len(est.regressor_dim(), d + 1)?;
    let s = model.signals(x, nu)?;
    let l = est.latent_dim();
    let n_chunks = trials.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut rng = rng::stream(seed, c as u64);
            let mut p = Array2::zeros((d + 1, len));
            let mut mag = vec![0.0; d];
            for j in 0..len {
                noisy_magnitudes(&s, noise, &mut rng, &mut mag);
                for k in 0..d {
                    p[[k, j]] = mag[k];
                }
                p[[d, j]] = nu.kappa;
            }
            let xhat = est.predict_batch(p.view())?;
            let mut m = Moments::new(l);
            for col in xhat.columns() {
                m.push(col);
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let total = parts.into_iter().fold(Moments::new(l), Moments::merge);
    let truth = Array1::from(x.to_array().to_vec());
    Error::check_len(truth.len(), l)?;
    let bias = &total.mean - &truth;
    let denom = (total.n - 1.0).max(1.0);
    let mut cov = total.m2 / denom;
    linalg::symmetrize(&mut cov);
    let se = cov.diag().mapv(|v| (v / total.n).sqrt());
    let min_snr = s.iter().zip(&noise.sigmas).map(|(s, sg)| s / sg).fold(f64::INFINITY, f64::min);
    Ok(BiasCovReport { bias, cov, method: Method::MonteCarlo, bias_se: Some(se), min_snr })
}

/// `‖a − b‖ / ‖b‖` in the Frobenius norm.
pub fn relative_error<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}
