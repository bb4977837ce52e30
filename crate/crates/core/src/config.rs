//! Run configuration read from a TOML file.
//!
//! Every section has defaults, so an empty file is a valid config. Seeds are
//! explicit: each stage seed is either given or derived from the master seed
//! with [`rng::child_seed`], never from entropy.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::holdout::HoldoutConfig;
use crate::oracle::IsochromatConfig;
use crate::prior::{ScalarDistribution, Support, KAPPA_SUPPORT};
use crate::rng;
use crate::signal::{Acquisition, NoiseModel};
use crate::vpm::VpmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub acquisition: Acquisition,
    pub noise: NoiseSpec,
    pub priors: PriorsConfig,
    pub estimator: EstimatorConfig,
    pub vpm: VpmSection,
    pub phantom: PhantomConfig,
    pub holdout: HoldoutSection,
    pub analysis: AnalysisConfig,
    pub oracle: OracleConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            acquisition: Acquisition::brain_relaxometry(),
            noise: NoiseSpec::default(),
            priors: PriorsConfig::default(),
            estimator: EstimatorConfig::default(),
            vpm: VpmSection::default(),
            phantom: PhantomConfig::default(),
            holdout: HoldoutSection::default(),
            analysis: AnalysisConfig::default(),
            oracle: OracleConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Noise used to simulate training data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// One σ shared by every dataset.
    Fixed { sigma: f64 },
    /// One σ per dataset, in dataset order.
    PerDataset { sigmas: Vec<f64> },
    /// σ from the background voxels of the test data, pooled over datasets.
    #[default]
    Estimate,
}

impl NoiseSpec {
    /// Resolves to a noise model for `d` datasets. `estimated` is only
    /// consulted in `estimate` mode.
    pub fn resolve(&self, d: usize, estimated: impl FnOnce() -> Result<f64>) -> Result<NoiseModel> {
        match self {
            NoiseSpec::Fixed { sigma } => NoiseModel::isotropic(d, *sigma),
            NoiseSpec::PerDataset { sigmas } => {
                Error::check_len(d, sigmas.len())?;
                NoiseModel::new(sigmas.clone())
            }
            NoiseSpec::Estimate => NoiseModel::isotropic(d, estimated()?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsConfig {
    pub support: Support,
    /// Replace the relaxation priors implied by `support`.
    pub t1: Option<ScalarDistribution>,
    pub t2: Option<ScalarDistribution>,
}

impl Default for PriorsConfig {
    fn default() -> Self {
        PriorsConfig { support: Support::Tight, t1: None, t2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub n_train: usize,
    pub features: usize,
    pub lambda_log2: f64,
    pub rho_log2: f64,
    pub train_seed: Option<u64>,
    pub feature_seed: Option<u64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n_train: 100_000,
            features: 1000,
            lambda_log2: 0.6,
            rho_log2: -41.0,
            train_seed: None,
            feature_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpmSection {
    pub clusters: usize,
    pub t1_count: usize,
    pub t2_count: usize,
    pub t1_support: (f64, f64),
    pub t2_support: (f64, f64),
    pub max_iters: usize,
    pub seed: Option<u64>,
}

impl Default for VpmSection {
    fn default() -> Self {
        let p = VpmConfig::full();
        VpmSection {
            clusters: p.clusters,
            t1_count: p.t1_count,
            t2_count: p.t2_count,
            t1_support: p.t1_support,
            t2_support: p.t2_support,
            max_iters: p.max_iters,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Brain,
    Vial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub rows: usize,
    pub cols: usize,
    pub kappa_amplitude: f64,
    /// Per-component noise standard deviation added to every dataset.
    pub sigma: f64,
    pub seed: Option<u64>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            kind: PhantomKind::Brain,
            rows: 64,
            cols: 64,
            kappa_amplitude: 0.2,
            sigma: 3.885e-4,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldoutSection {
    pub lambda_log2: Vec<f64>,
    pub rho_log2: Vec<f64>,
    pub t: usize,
    pub w: Vec<f64>,
    pub n_train: usize,
    pub features: usize,
    pub train_seed: Option<u64>,
    pub holdout_seed: Option<u64>,
    pub feature_seed: Option<u64>,
}

impl Default for HoldoutSection {
    fn default() -> Self {
        let d = HoldoutConfig::desk_default();
        HoldoutSection {
            lambda_log2: d.lambda_grid.iter().map(|v| v.log2()).collect(),
            rho_log2: d.rho_grid.iter().map(|v| v.log2()).collect(),
            t: d.t,
            w: d.w,
            n_train: 100_000,
            features: 1000,
            train_seed: None,
            holdout_seed: None,
            feature_seed: None,
        }
    }
}

impl HoldoutSection {
    pub fn to_config(&self) -> HoldoutConfig {
        HoldoutConfig {
            lambda_grid: self.lambda_log2.iter().map(|v| v.exp2()).collect(),
            rho_grid: self.rho_log2.iter().map(|v| v.exp2()).collect(),
            t: self.t,
            w: self.w.clone(),
        }
    }
}

/// One `(x, ν)` point to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisPoint {
    pub m0: f64,
    pub t1: f64,
    pub t2: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub points: Vec<AnalysisPoint>,
    /// Monte Carlo trials per point; 0 skips Monte Carlo.
    pub trials: usize,
    /// Training size of the exact estimator used for closed-form analysis.
    pub n_train: usize,
    pub rho_log2: f64,
    /// CRLB grid: counts over the tight T1 and T2 supports and the phantom κ range.
    pub crlb_grid: (usize, usize, usize),
    pub seed: Option<u64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            points: vec![
                AnalysisPoint { m0: 0.77, t1: 832.0, t2: 79.6, kappa: 1.0 },
                AnalysisPoint { m0: 0.86, t1: 1331.0, t2: 110.0, kappa: 1.0 },
            ],
            trials: 10_000,
            n_train: 1000,
            rho_log2: -20.0,
            crlb_grid: (5, 5, 3),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub simulator: IsochromatConfig,
    /// Point counts over the tight T1 and T2 supports and over `kappa_range`.
    pub grid: (usize, usize, usize),
    pub kappa_range: (f64, f64),
    pub threshold: f64,
    pub seed: Option<u64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            simulator: IsochromatConfig::default(),
            grid: (5, 5, 3),
            kappa_range: KAPPA_SUPPORT,
            threshold: 1e-3,
            seed: None,
        }
    }
}

/// Input files. Relative paths are resolved against the output directory, so
/// that the outputs of one command are the inputs of the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: PathBuf,
    pub kappa: PathBuf,
    pub mask: PathBuf,
    pub background: PathBuf,
    pub estimator: PathBuf,
    /// Optional: ROI masks and truth maps. When both exist, map commands also
    /// write ROI statistics.
    pub rois: PathBuf,
    pub truth: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data.map".into(),
            kappa: "kappa.map".into(),
            mask: "mask.map".into(),
            background: "background.map".into(),
            estimator: "estimator.perk".into(),
            rois: "rois.map".into(),
            truth: "truth.map".into(),
        }
    }
}

impl Paths {
    pub fn resolve(path: &Path, out: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            out.join(path)
        }
    }
}

/// Every stage seed after defaults are filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub phantom: u64,
    pub train: u64,
    pub features: u64,
    pub holdout_train: u64,
    pub holdout_test: u64,
    pub holdout_features: u64,
    pub vpm: u64,
    pub analysis: u64,
    pub oracle: u64,
}

impl fmt::Display for ResolvedSeeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seeds: master={} phantom={} train={} features={} holdout_train={} holdout_test={} \
             holdout_features={} vpm={} analysis={} oracle={}",
            self.master,
            self.phantom,
            self.train,
            self.features,
            self.holdout_train,
            self.holdout_test,
            self.holdout_features,
            self.vpm,
            self.analysis,
            self.oracle
        )
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| locate_key(text, s.start)).unwrap_or_default();
            Error::Config { key, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.to_string(), message });
        if let Err(e) = Acquisition::new(self.acquisition.scans.clone()) {
            return bad("acquisition.scans", e.to_string());
        }
        let e = &self.estimator;
        if e.n_train == 0 || e.features == 0 {
            return bad("estimator", "n_train and features must be positive".into());
        }
        if !e.lambda_log2.is_finite() || !e.rho_log2.is_finite() {
            return bad("estimator", "lambda_log2 and rho_log2 must be finite".into());
        }
        if let Err(err) = self.holdout.to_config().validate() {
            return bad("holdout", err.to_string());
        }
        if self.holdout.n_train == 0 || self.holdout.features == 0 {
            return bad("holdout", "n_train and features must be positive".into());
        }
        let p = &self.phantom;
        if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
            return bad("phantom.sigma", format!("must be nonnegative, got {}", p.sigma));
        }
        if !(0.0..=0.5).contains(&p.kappa_amplitude) {
            return bad("phantom.kappa_amplitude", format!("must lie in [0, 0.5], got {}", p.kappa_amplitude));
        }
        let v = &self.vpm;
        if v.clusters == 0 || v.t1_count == 0 || v.t2_count == 0 {
            return bad("vpm", "clusters and grid counts must be positive".into());
        }
        let (k_lo, k_hi) = self.oracle.kappa_range;
        if !(k_lo > 0.0 && k_hi >= k_lo && k_hi.is_finite()) {
            return bad("oracle.kappa_range", format!("need 0 < lo <= hi, got ({k_lo}, {k_hi})"));
        }
        if let NoiseSpec::Fixed { sigma } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("noise.sigma", format!("must be nonnegative, got {sigma}"));
            }
        }
        Ok(())
    }

    /// Stage seeds: explicit ones win, the rest derive from the master seed.
    pub fn seeds(&self) -> ResolvedSeeds {
        let m = self.seed;
        let pick = |v: Option<u64>, tag: u64| v.unwrap_or_else(|| rng::child_seed(m, tag));
        ResolvedSeeds {
            master: m,
            phantom: pick(self.phantom.seed, 1),
            train: pick(self.estimator.train_seed, 2),
            features: pick(self.estimator.feature_seed, 3),
            holdout_train: pick(self.holdout.train_seed, 4),
            holdout_test: pick(self.holdout.holdout_seed, 5),
            holdout_features: pick(self.holdout.feature_seed, 6),
            vpm: pick(self.vpm.seed, 7),
            analysis: pick(self.analysis.seed, 8),
            oracle: pick(self.oracle.seed, 9),
        }
    }

    pub fn vpm_config(&self) -> VpmConfig {
        let v = &self.vpm;
        VpmConfig {
            clusters: v.clusters,
            t1_count: v.t1_count,
            t2_count: v.t2_count,
            t1_support: v.t1_support,
            t2_support: v.t2_support,
            seed: self.seeds().vpm,
            max_iters: v.max_iters,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.estimator.lambda_log2.exp2()
    }

    pub fn rho(&self) -> f64 {
        self.estimator.rho_log2.exp2()
    }
}

/// Dotted path of the innermost table and key enclosing byte `offset`.
fn locate_key(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.acquisition.n_datasets(), 4);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig {
            seed: 42,
            noise: NoiseSpec::PerDataset { sigmas: vec![1e-3, 2e-3, 1e-3, 1e-3] },
            ..RunConfig::default()
        };
        cfg.priors.t1 = Some(ScalarDistribution::Uniform { lo: 500.0, hi: 900.0 });
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_the_key() {
        match RunConfig::from_toml("[estimator]\nn_train = \"many\"\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "estimator.n_train"),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::from_toml("[phantom]\nkappa_amplitude = 0.9\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "phantom.kappa_amplitude"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RunConfig::from_toml("[phantom]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seeds_are_explicit_or_derived() {
        let a = RunConfig::from_toml("seed = 7\n[estimator]\ntrain_seed = 99\n").unwrap().seeds();
        assert_eq!(a.train, 99);
        let b = RunConfig::from_toml("seed = 7\n").unwrap().seeds();
        assert_eq!(a.features, b.features);
        assert_ne!(b.train, b.features);
        let c = RunConfig::from_toml("seed = 8\n").unwrap().seeds();
        assert_ne!(b.features, c.features);
    }

    #[test]
    fn noise_modes() {
        let est = || Ok(0.5);
        assert_eq!(NoiseSpec::Estimate.resolve(2, est).unwrap().sigmas, vec![0.5, 0.5]);
        assert_eq!(NoiseSpec::Fixed { sigma: 0.1 }.resolve(3, est).unwrap().sigmas, vec![0.1; 3]);
        assert!(NoiseSpec::PerDataset { sigmas: vec![0.1] }.resolve(2, est).is_err());
        let cfg = RunConfig::from_toml("[noise]\nmode = \"fixed\"\nsigma = 0.01\n").unwrap();
        assert_eq!(cfg.noise, NoiseSpec::Fixed { sigma: 0.01 });
    }

    #[test]
    fn holdout_grid_matches_desk_default() {
        let h = HoldoutSection::default().to_config();
        let d = HoldoutConfig::desk_default();
        for (a, b) in h.lambda_grid.iter().zip(&d.lambda_grid) {
            assert!((a / b - 1.0).abs() < 1e-14);
        }
    }
}
