//! Holdout selection of the bandwidth scale `λ` and regularization `ρ`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{generate_training_set, rff_draw, Estimator, KernelConfig, RffMoments, TrainingSet};
use crate::prior::PriorSpec;
use crate::signal::{NoiseModel, SignalModel};
use crate::util::pow2_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutConfig {
    pub lambda_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Number of holdout samples `T`.
    pub t: usize,
    /// Diagonal of the unit-trace weighting `W`, one entry per latent parameter.
    pub w: Vec<f64>,
}

impl HoldoutConfig {
    /// 7×7 log₂ grid centred on `(2^0.6, 2^-41)` with half-octave steps in
    /// `λ` and 3-octave steps in `ρ`.
    pub fn desk_default() -> Self {
        HoldoutConfig {
            lambda_grid: pow2_grid(0.6 - 1.5, 0.5, 7),
            rho_grid: pow2_grid(-41.0 - 9.0, 3.0, 7),
            t: 10_000,
            w: vec![0.0, 0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("lambda_grid", &self.lambda_grid), ("rho_grid", &self.rho_grid)] {
            if g.is_empty() {
                return Err(Error::invalid(format!("{name} is empty")));
            }
            if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("{name} entries must be positive")));
            }
            if g.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::invalid(format!("{name} must be strictly increasing")));
            }
        }
        if self.t == 0 {
            return Err(Error::invalid("holdout size must be at least 1"));
        }
        validate_weights(&self.w)
    }
}

fn validate_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(format!("weights must be nonnegative: {w:?}")));
    }
    let trace: f64 = w.iter().sum();
    if (trace - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights must sum to 1, got {trace}")));
    }
    Ok(())
}

/// `Ψ = sqrt((1/T) Σ_t Σ_l w_l ((x̂_lt − x_lt)/x_lt)²)` from predictions.
pub fn holdout_cost_from_predictions(xhat: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, w: &[f64]) -> Result<f64> {
    if x.ncols() == 0 {
        return Err(Error::invalid("holdout set is empty"));
    }
    Error::check_len(x.nrows(), w.len())?;
    Error::check_len(x.nrows(), xhat.nrows())?;
    Error::check_len(x.ncols(), xhat.ncols())?;
    validate_weights(w)?;
    let mut total = 0.0;
    for (l, &wl) in w.iter().enumerate() {
        if wl == 0.0 {
            continue;
        }
        for (a, b) in xhat.row(l).iter().zip(x.row(l)) {
            if *b == 0.0 {
                return Err(Error::invalid(format!("zero regressand in weighted component {l}")));
            }
            let r = (a - b) / b;
            total += wl * r * r;
        }
    }
    Ok((total / x.ncols() as f64).sqrt())
}

/// Holdout cost of `est` on regressands `x` (L×T) and regressors `p` (P×T).
pub fn holdout_cost<E: Estimator + ?Sized>(
    est: &E,
    x: ArrayView2<'_, f64>,
    p: ArrayView2<'_, f64>,
    w: &[f64],
) -> Result<f64> {
    Error::check_len(x.ncols(), p.ncols())?;
    let xhat = est.predict_batch(p)?;
    holdout_cost_from_predictions(xhat.view(), x, w)
}

/// Ψ over the `λ × ρ` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSurface {
    pub lambda_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// `cost[[i, j]]` is Ψ at `(lambda_grid[i], rho_grid[j])`; failed cells are `+∞`.
    pub cost: Array2<f64>,
    pub argmin: (usize, usize),
}

impl HoldoutSurface {
    pub fn from_costs(lambda_grid: Vec<f64>, rho_grid: Vec<f64>, cost: Array2<f64>) -> Result<Self> {
        Error::check_len(lambda_grid.len(), cost.nrows())?;
        Error::check_len(rho_grid.len(), cost.ncols())?;
        let mut best = (0, 0);
        for ((i, j), c) in cost.indexed_iter() {
            // strict comparison keeps the earliest (smallest λ, then ρ) minimizer
            if *c < cost[best] {
                best = (i, j);
            }
        }
        Ok(HoldoutSurface { lambda_grid, rho_grid, cost, argmin: best })
    }

    pub fn best_lambda(&self) -> f64 {
        self.lambda_grid[self.argmin.0]
    }

    pub fn best_rho(&self) -> f64 {
        self.rho_grid[self.argmin.1]
    }

    pub fn min_cost(&self) -> f64 {
        self.cost[self.argmin]
    }

    /// Ψ at the grid point nearest to `(lambda, rho)` in log scale.
    pub fn cost_near(&self, lambda: f64, rho: f64) -> f64 {
        let nearest = |g: &[f64], v: f64| {
            (0..g.len())
                .min_by(|&a, &b| (g[a].ln() - v.ln()).abs().total_cmp(&(g[b].ln() - v.ln()).abs()))
                .expect("nonempty grid")
        };
        self.cost[[nearest(&self.lambda_grid, lambda), nearest(&self.rho_grid, rho)]]
    }
}

/// Seeds for the three random inputs of a holdout sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSeeds {
    pub train: u64,
    pub holdout: u64,
    pub features: u64,
}

/// Sweeps the grid. One training set and one holdout set are simulated and
/// shared by every cell; features are drawn with the same seed for every `λ`
/// (rescaled by the bandwidth). Moments are accumulated once per `λ` and
/// factored once per `ρ`.
///
/// `base` supplies the per-coordinate bandwidth; its `λ` is replaced by each
/// grid value. Cells whose training fails cost `+∞`.
#[allow(clippy::too_many_arguments)]
pub fn holdout_search<M: SignalModel + ?Sized>(
    cfg: &HoldoutConfig,
    priors: &PriorSpec,
    model: &M,
    noise: &NoiseModel,
    base: &KernelConfig,
    train_n: usize,
    z: usize,
    seeds: HoldoutSeeds,
) -> Result<HoldoutSurface> {
    cfg.validate()?;
    let ts = generate_training_set(priors, model, noise, train_n, seeds.train)?;
    let test = generate_training_set(priors, model, noise, cfg.t, seeds.holdout)?;
    holdout_search_with(cfg, base, &ts, &test, z, seeds.features)
}

/// [`holdout_search`] on caller-supplied training and holdout sets.
pub fn holdout_search_with(
    cfg: &HoldoutConfig,
    base: &KernelConfig,
    ts: &TrainingSet,
    test: &TrainingSet,
    z: usize,
    feature_seed: u64,
) -> Result<HoldoutSurface> {
    cfg.validate()?;
    Error::check_len(ts.regressands.nrows(), cfg.w.len())?;
    let mut cost = Array2::from_elem((cfg.lambda_grid.len(), cfg.rho_grid.len()), f64::INFINITY);
    for (i, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let kernel = base.with_lambda(lambda)?;
        let fm = rff_draw(&kernel, z, feature_seed)?;
        let moments = match RffMoments::accumulate(ts, &fm) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("holdout: lambda = {lambda:e} failed: {e}");
                continue;
            }
        };
        let feats = fm.featurize_batch(test.regressors.view())?;
        let row: Vec<f64> = cfg
            .rho_grid
            .par_iter()
            .map(|&rho| {
                let cell = moments.solve(&fm, rho).and_then(|est| {
                    let bias = &est.m_x - &est.weights.t().dot(&est.m_z);
                    let mut xhat = est.weights.t().dot(&feats.t());
                    for mut col in xhat.columns_mut() {
                        col += &bias;
                    }
                    holdout_cost_from_predictions(xhat.view(), test.regressands.view(), &cfg.w)
                });
                match cell {
                    Ok(c) if c.is_finite() => c,
                    Ok(_) => f64::INFINITY,
                    Err(e) => {
                        log::warn!("holdout: (lambda, rho) = ({lambda:e}, {rho:e}) failed: {e}");
                        f64::INFINITY
                    }
                }
            })
            .collect();
        for (j, c) in row.into_iter().enumerate() {
            cost[[i, j]] = c;
        }
    }
    HoldoutSurface::from_costs(cfg.lambda_grid.clone(), cfg.rho_grid.clone(), cost)
}
