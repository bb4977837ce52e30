//! Separable sampling distributions for the latent and known parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{KnownParams, LatentParams};

/// Lower end of the M0 support; M0 must stay strictly positive for the
/// normalized holdout error.
pub const M0_FLOOR: f64 = 2.2e-16;

/// Ratio of the M0 support's upper end to the maximum test magnitude.
pub const M0_SUPPORT_FACTOR: f64 = 6.67;

/// Support to which the κ density is clipped.
pub const KAPPA_SUPPORT: (f64, f64) = (0.5, 2.0);

/// Tight relaxation supports (ms), matched to the acquisition design ranges.
pub const T1_TIGHT: (f64, f64) = (400.0, 2000.0);
pub const T2_TIGHT: (f64, f64) = (40.0, 200.0);

/// Draws rejected in a row before a clipped KDE gives up.
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// Gaussian KDE over `points`, restricted to `[lo, hi]` by rejection. A
    /// zero bandwidth is a point mass at the (identical) sample points.
    ClippedKde {
        points: Vec<f64>,
        bandwidth: f64,
        lo: f64,
        hi: f64,
    },
}

impl ScalarDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = ScalarDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn log_uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = ScalarDistribution::LogUniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("distribution support must satisfy lo < hi: {self:?}")));
        }
        match self {
            ScalarDistribution::LogUniform { lo, .. } if *lo <= 0.0 => {
                Err(Error::invalid("log-uniform support must be positive"))
            }
            ScalarDistribution::ClippedKde { points, bandwidth, .. } => {
                if points.is_empty() || !(*bandwidth >= 0.0) {
                    Err(Error::invalid("KDE needs sample points and a nonnegative bandwidth"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            ScalarDistribution::Uniform { lo, hi }
            | ScalarDistribution::LogUniform { lo, hi }
            | ScalarDistribution::ClippedKde { lo, hi, .. } => (lo, hi),
        }
    }

    /// One draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            ScalarDistribution::Uniform { lo, hi } => Ok(lo + (hi - lo) * rng.random::<f64>()),
            ScalarDistribution::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                Ok((a + (b - a) * rng.random::<f64>()).exp().clamp(lo, hi))
            }
            ScalarDistribution::ClippedKde { ref points, bandwidth, lo, hi } => {
                for _ in 0..MAX_REJECTIONS {
                    let centre = points[rng.random_range(0..points.len())];
                    let jitter: f64 = rng.sample(StandardNormal);
                    let v = centre + bandwidth * jitter;
                    if (lo..=hi).contains(&v) {
                        return Ok(v);
                    }
                }
                Err(Error::numerical("clipped KDE has (almost) no mass inside its support"))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::invalid("cannot draw zero samples"));
        }
        self.validate()?;
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Gaussian KDE with Silverman's bandwidth `1.06·σ̂·n^(-1/5)`, clipped to
/// `support`.
pub fn fit_kde(samples: &[f64], support: (f64, f64)) -> Result<ScalarDistribution> {
    if samples.len() < 2 {
        return Err(Error::invalid("KDE needs at least two samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("KDE samples must be finite"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let bandwidth = 1.06 * var.sqrt() * n.powf(-0.2);
    if bandwidth == 0.0 {
        log::warn!("all KDE samples are identical ({mean}); using a point mass");
    }
    let d = ScalarDistribution::ClippedKde { points: samples.to_vec(), bandwidth, lo: support.0, hi: support.1 };
    d.validate()?;
    Ok(d)
}

/// `Uniform(M0_FLOOR, 6.67 · max magnitude)`.
pub fn m0_support_from_data(magnitudes: &[f64]) -> Result<ScalarDistribution> {
    let max = magnitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if magnitudes.is_empty() || !(max > 0.0) || !max.is_finite() {
        return Err(Error::invalid("M0 support needs test data with a positive finite maximum"));
    }
    ScalarDistribution::uniform(M0_FLOOR, M0_SUPPORT_FACTOR * max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub m0: ScalarDistribution,
    pub t1: ScalarDistribution,
    pub t2: ScalarDistribution,
    pub kappa: ScalarDistribution,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("m0", &self.m0), ("t1", &self.t1), ("t2", &self.t2), ("kappa", &self.kappa)] {
            d.validate()?;
            let (lo, _) = d.support();
            let ok = if name == "m0" { lo >= 0.0 } else { lo > 0.0 };
            if !ok {
                return Err(Error::invalid(format!("{name} support must be positive")));
            }
        }
        Ok(())
    }

    /// One joint draw; the four marginals are independent.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(LatentParams, KnownParams)> {
        let m0 = self.m0.sample_one(rng)?;
        let t1 = self.t1.sample_one(rng)?;
        let t2 = self.t2.sample_one(rng)?;
        let kappa = self.kappa.sample_one(rng)?;
        Ok((LatentParams { m0, t1, t2 }, KnownParams { kappa }))
    }

    pub fn with_relaxation(mut self, t1: ScalarDistribution, t2: ScalarDistribution) -> Self {
        self.t1 = t1;
        self.t2 = t2;
        self
    }
}

/// Which relaxation supports to train over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    /// T1 ∈ [400, 2000] ms, T2 ∈ [40, 200] ms.
    Tight,
    /// T1 ∈ [10^1.5, 10^3.5] ms, T2 ∈ [10^0.5, 10^3.5] ms.
    Broad,
}

impl Support {
    pub fn t1_t2(self) -> (ScalarDistribution, ScalarDistribution) {
        match self {
            Support::Tight => (
                ScalarDistribution::LogUniform { lo: T1_TIGHT.0, hi: T1_TIGHT.1 },
                ScalarDistribution::LogUniform { lo: T2_TIGHT.0, hi: T2_TIGHT.1 },
            ),
            Support::Broad => (
                ScalarDistribution::LogUniform { lo: 10f64.powf(1.5), hi: 10f64.powf(3.5) },
                ScalarDistribution::LogUniform { lo: 10f64.powf(0.5), hi: 10f64.powf(3.5) },
            ),
        }
    }
}

/// Priors built from test data: M0 from the magnitude maximum, κ by KDE over
/// the known map, and log-uniform relaxation times over `support`.
pub fn default_priors(magnitudes: &[f64], kappa_map: &[f64], support: Support) -> Result<PriorSpec> {
    if magnitudes.is_empty() || kappa_map.is_empty() {
        return Err(Error::invalid("default priors need magnitude data and a kappa map"));
    }
    let (t1, t2) = support.t1_t2();
    let kappa = if kappa_map.len() == 1 {
        ScalarDistribution::ClippedKde {
            points: kappa_map.to_vec(),
            bandwidth: 0.0,
            lo: KAPPA_SUPPORT.0,
            hi: KAPPA_SUPPORT.1,
        }
    } else {
        fit_kde(kappa_map, KAPPA_SUPPORT)?
    };
    Ok(PriorSpec { m0: m0_support_from_data(magnitudes)?, t1, t2, kappa })
}
