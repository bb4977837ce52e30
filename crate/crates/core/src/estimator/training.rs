use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::prior::PriorSpec;
use crate::rng;
use crate::signal::{NoiseModel, SignalModel, KNOWN_DIM, LATENT_DIM};

/// Samples drawn from one random stream.
pub(crate) const CHUNK: usize = 4096;

/// Simulated (latent parameter, regressor) pairs stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// L×N latent parameters.
    pub regressands: Array2<f64>,
    /// P×N regressors: D noisy magnitudes followed by the K known parameters.
    pub regressors: Array2<f64>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl TrainingSet {
    pub fn new(regressands: Array2<f64>, regressors: Array2<f64>, noise: NoiseModel, seed: u64) -> Result<Self> {
        Error::check_len(regressands.ncols(), regressors.ncols())?;
        if regressands.ncols() == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(TrainingSet { regressands, regressors, noise, seed })
    }

    pub fn len(&self) -> usize {
        self.regressands.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Regressor dimension `P = D + K`.
    pub fn regressor_dim(&self) -> usize {
        self.regressors.nrows()
    }

    /// The first `n` columns.
    pub fn head(&self, n: usize) -> TrainingSet {
        let n = n.min(self.len());
        TrainingSet {
            regressands: self.regressands.slice(s![.., ..n]).to_owned(),
            regressors: self.regressors.slice(s![.., ..n]).to_owned(),
            noise: self.noise.clone(),
            seed: self.seed,
        }
    }
}

/// Adds complex Gaussian noise (each component with standard deviation σ_d)
/// to `signal` and returns the magnitudes.
pub fn noisy_magnitudes<R: Rng + ?Sized>(signal: &[f64], noise: &NoiseModel, rng: &mut R, out: &mut [f64]) {
    for ((o, s), sigma) in out.iter_mut().zip(signal).zip(&noise.sigmas) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *o = (s + sigma * re).hypot(sigma * im);
    }
}

/// Draws `n` parameter sets from `priors`, simulates noiseless signals with
/// `model`, adds complex noise and stores magnitudes with κ as regressors.
/// Samples in chunk `c` come from random stream `c` of `seed`.
pub fn generate_training_set<M: SignalModel + ?Sized>(
    priors: &PriorSpec,
    model: &M,
    noise: &NoiseModel,
    n: usize,
    seed: u64,
) -> Result<TrainingSet> {
    if n == 0 {
        return Err(Error::invalid("training set size must be at least 1"));
    }
    priors.validate()?;
    let d = model.n_datasets();
    Error::check_len(d, noise.len())?;
    let p = d + KNOWN_DIM;

    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut rng = rng::stream(seed, c as u64);
            let mut xs = Vec::with_capacity(len * LATENT_DIM);
            let mut ps = Vec::with_capacity(len * p);
            let mut s = vec![0.0; d];
            let mut mag = vec![0.0; d];
            for _ in 0..len {
                let (x, nu) = priors.sample_one(&mut rng)?;
                model.signals_into(&x, &nu, &mut s)?;
                noisy_magnitudes(&s, noise, &mut rng, &mut mag);
                xs.extend_from_slice(&x.to_array());
                ps.extend_from_slice(&mag);
                ps.push(nu.kappa);
            }
            Ok((xs, ps))
        })
        .collect::<Result<_>>()?;

    let mut regressands = Array2::zeros((LATENT_DIM, n));
    let mut regressors = Array2::zeros((p, n));
    let mut col = 0;
    for (xs, ps) in chunks {
        for (xc, pc) in xs.chunks_exact(LATENT_DIM).zip(ps.chunks_exact(p)) {
            for (l, v) in xc.iter().enumerate() {
                regressands[[l, col]] = *v;
            }
            for (i, v) in pc.iter().enumerate() {
                regressors[[i, col]] = *v;
            }
            col += 1;
        }
    }
    TrainingSet::new(regressands, regressors, noise.clone(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::ScalarDistribution;
    use crate::signal::{rician_mean, Acquisition, KnownParams, LatentParams};

    fn priors() -> PriorSpec {
        PriorSpec {
            m0: ScalarDistribution::uniform(0.1, 2.0).unwrap(),
            t1: ScalarDistribution::log_uniform(400.0, 2000.0).unwrap(),
            t2: ScalarDistribution::log_uniform(40.0, 200.0).unwrap(),
            kappa: ScalarDistribution::uniform(0.8, 1.2).unwrap(),
        }
    }

    fn point(v: f64) -> ScalarDistribution {
        ScalarDistribution::ClippedKde { points: vec![v], bandwidth: 0.0, lo: 0.5 * v, hi: 1.5 * v }
    }

    #[test]
    fn noiseless_regressors_equal_signals() {
        let acq = Acquisition::brain_relaxometry();
        let ts = generate_training_set(&priors(), &acq, &NoiseModel::noiseless(4), 50, 3).unwrap();
        for n in 0..50 {
            let x = LatentParams::from_slice(&ts.regressands.column(n).to_vec()).unwrap();
            let nu = KnownParams { kappa: ts.regressors[[4, n]] };
            let s = acq.signals(&x, &nu).unwrap();
            for (d, sd) in s.iter().enumerate() {
                assert_eq!(ts.regressors[[d, n]], *sd);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let acq = Acquisition::brain_relaxometry();
        let noise = NoiseModel::isotropic(4, 0.01).unwrap();
        let a = generate_training_set(&priors(), &acq, &noise, 5000, 9).unwrap();
        let b = generate_training_set(&priors(), &acq, &noise, 5000, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_training_set(&priors(), &acq, &noise, 5000, 10).unwrap();
        assert_ne!(a.regressors, c.regressors);
        assert!(generate_training_set(&priors(), &acq, &noise, 0, 9).is_err());
    }

    #[test]
    fn magnitude_means_match_rician_mean() {
        // fixed x; |s|/σ = 5 on the weakest dataset
        let acq = Acquisition::brain_relaxometry();
        let x = LatentParams::new(1.0, 832.0, 79.6).unwrap();
        let nu = KnownParams { kappa: 1.0 };
        let s = acq.signals(&x, &nu).unwrap();
        let sigma = s.iter().copied().fold(f64::INFINITY, f64::min) / 5.0;
        let noise = NoiseModel::isotropic(4, sigma).unwrap();
        let fixed = PriorSpec { m0: point(1.0), t1: point(832.0), t2: point(79.6), kappa: point(1.0) };
        let ts = generate_training_set(&fixed, &acq, &noise, 100_000, 11).unwrap();
        let mu = rician_mean(&s, &noise).unwrap();
        for (d, want) in mu.iter().enumerate() {
            let m = ts.regressors.row(d).mean().unwrap();
            assert!((m / want - 1.0).abs() < 0.01, "dataset {d}: {m} vs {want}");
        }
    }
}
