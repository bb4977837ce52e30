//! End-to-end steps shared by the command line and the tests: phantom
//! synthesis, priors and bandwidth from test images, and RFF training.

use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::config::{PhantomConfig, PhantomKind, PriorsConfig, RunConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    bandwidth_from_test_data, generate_training_set, masked_regressors, rff_draw, train_rff, KernelConfig, RffPerk,
};
use crate::phantom::{brain_phantom, estimate_sigma, kappa_bump, masked_values, synthesize, vial_phantom};
use crate::phantom::{PhantomScene, Synthesis};
use crate::prior::{default_priors, PriorSpec};
use crate::signal::{Acquisition, NoiseModel, SignalModel};

/// Measured images, the known κ map and the voxels to estimate.
#[derive(Debug, Clone)]
pub struct TestImages {
    pub datasets: Vec<Array2<f64>>,
    pub kappa: Array2<f64>,
    pub mask: Array2<bool>,
}

impl TestImages {
    pub fn new(datasets: Vec<Array2<f64>>, kappa: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::invalid("no datasets"));
        }
        for img in datasets.iter().chain(std::iter::once(&kappa)) {
            if img.dim() != mask.dim() {
                return Err(Error::invalid(format!(
                    "image shape {:?} does not match mask {:?}",
                    img.dim(),
                    mask.dim()
                )));
            }
        }
        Ok(TestImages { datasets, kappa, mask })
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// A synthesized phantom and its noisy data.
#[derive(Debug, Clone)]
pub struct PhantomRun {
    pub scene: PhantomScene,
    pub synthesis: Synthesis,
}

impl PhantomRun {
    pub fn test_images(&self) -> Result<TestImages> {
        TestImages::new(self.synthesis.magnitudes.clone(), self.scene.kappa_map.clone(), self.scene.tissue_mask())
    }
}

pub fn make_phantom<M: SignalModel + ?Sized>(cfg: &PhantomConfig, model: &M, seed: u64) -> Result<PhantomRun> {
    let dims = (cfg.rows, cfg.cols);
    let scene = match cfg.kind {
        PhantomKind::Brain => brain_phantom(dims)?,
        PhantomKind::Vial => vial_phantom(dims)?,
    };
    let scene = scene.with_kappa(kappa_bump(dims, cfg.kappa_amplitude)?)?;
    let noise = NoiseModel::isotropic(model.n_datasets(), cfg.sigma)?;
    let synthesis = synthesize(&scene, model, &noise, seed)?;
    Ok(PhantomRun { scene, synthesis })
}

/// σ from background magnitudes pooled over every dataset.
pub fn background_sigma(datasets: &[Array2<f64>], background: &Array2<bool>) -> Result<f64> {
    let mut pooled = Vec::new();
    for img in datasets {
        pooled.extend(masked_values(img, background)?);
    }
    estimate_sigma(&pooled)
}

/// Priors from the masked test data: M0 support from the pooled magnitudes,
/// κ by KDE over the masked κ map, relaxation times per `cfg`.
pub fn priors_from_images(images: &TestImages, cfg: &PriorsConfig) -> Result<PriorSpec> {
    let mut mags = Vec::new();
    for img in &images.datasets {
        mags.extend(masked_values(img, &images.mask)?);
    }
    let kappa = masked_values(&images.kappa, &images.mask)?;
    if mags.is_empty() {
        return Err(Error::invalid("priors need at least one masked voxel"));
    }
    let mut priors = default_priors(&mags, &kappa, cfg.support)?;
    if let Some(t1) = &cfg.t1 {
        priors.t1 = t1.clone();
    }
    if let Some(t2) = &cfg.t2 {
        priors.t2 = t2.clone();
    }
    priors.validate()?;
    Ok(priors)
}

/// Bandwidth `λ·diag(mean regressor)` over the masked voxels.
pub fn kernel_from_images(images: &TestImages, lambda: f64) -> Result<KernelConfig> {
    let (p, _) = masked_regressors(&images.datasets, std::slice::from_ref(&images.kappa), &images.mask)?;
    let d = images.datasets.len();
    bandwidth_from_test_data(p.slice(ndarray::s![..d, ..]), p.slice(ndarray::s![d.., ..]), lambda)
}

/// Wall times of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainTiming {
    pub simulate: Duration,
    pub fit: Duration,
}

/// Simulates `n` training points and fits an RFF estimator with `z` features.
#[allow(clippy::too_many_arguments)]
pub fn train_perk<M: SignalModel + ?Sized>(
    priors: &PriorSpec,
    model: &M,
    noise: &NoiseModel,
    kernel: &KernelConfig,
    n: usize,
    z: usize,
    rho: f64,
    seeds: (u64, u64),
) -> Result<(RffPerk, TrainTiming)> {
    let t0 = Instant::now();
    let ts = generate_training_set(priors, model, noise, n, seeds.0)?;
    let simulate = t0.elapsed();
    let t1 = Instant::now();
    let fm = rff_draw(kernel, z, seeds.1)?;
    let est = train_rff(&ts, &fm, rho)?;
    Ok((est, TrainTiming { simulate, fit: t1.elapsed() }))
}

/// Priors, kernel and noise as `perk train` resolves them from `images`.
/// `background` is needed only when the noise is estimated.
pub fn training_inputs(
    cfg: &RunConfig,
    images: &TestImages,
    background: Option<&Array2<bool>>,
) -> Result<(PriorSpec, KernelConfig, NoiseModel)> {
    let priors = priors_from_images(images, &cfg.priors)?;
    let kernel = kernel_from_images(images, cfg.lambda())?;
    let noise = cfg.noise.resolve(images.datasets.len(), || match background {
        Some(bg) => background_sigma(&images.datasets, bg),
        None => Err(Error::invalid("noise estimation needs a background mask")),
    })?;
    Ok((priors, kernel, noise))
}

/// The acquisition of `cfg` after validation.
pub fn acquisition(cfg: &RunConfig) -> Result<Acquisition> {
    Acquisition::new(cfg.acquisition.scans.clone())
}
