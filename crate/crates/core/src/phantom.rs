//! Synthetic phantoms, noisy data synthesis and ROI statistics.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{KnownParams, LatentParams, NoiseModel, SignalModel, LATENT_DIM};

/// Truth values of one tissue class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tissue {
    pub name: &'static str,
    pub x: LatentParams,
}

pub const WHITE_MATTER: Tissue = Tissue { name: "WM", x: LatentParams { m0: 0.77, t1: 832.0, t2: 79.6 } };
pub const GRAY_MATTER: Tissue = Tissue { name: "GM", x: LatentParams { m0: 0.86, t1: 1331.0, t2: 110.0 } };
pub const CSF: Tissue = Tissue { name: "CSF", x: LatentParams { m0: 1.0, t1: 4000.0, t2: 2000.0 } };
pub const WATER: Tissue = Tissue { name: "water", x: LatentParams { m0: 1.0, t1: 2500.0, t2: 600.0 } };

/// Vials 4 to 8 of the relaxometry phantom, `(T1, T2)` in ms.
pub const VIALS: [(&str, f64, f64); 5] =
    [("V4", 1604.0, 190.94), ("V5", 1332.0, 133.27), ("V6", 1044.0, 96.89), ("V7", 801.7, 64.07), ("V8", 608.6, 46.42)];

/// A 2-D scene: class labels, truth maps, κ map and named ROI masks.
#[derive(Debug, Clone)]
pub struct PhantomScene {
    pub dims: (usize, usize),
    /// 0 is background; class `c > 0` is `classes[c - 1]`.
    pub class_map: Array2<u8>,
    pub classes: Vec<Tissue>,
    /// M0, T1 and T2 maps, zero in the background.
    pub truth: Vec<Array2<f64>>,
    pub kappa_map: Array2<f64>,
    pub rois: BTreeMap<String, Array2<bool>>,
}

impl PhantomScene {
    fn from_classes(class_map: Array2<u8>, classes: Vec<Tissue>, roi_names: &[(&str, u8)]) -> Self {
        let dims = class_map.dim();
        let mut truth = vec![Array2::zeros(dims); LATENT_DIM];
        for (ix, &c) in class_map.indexed_iter() {
            if c > 0 {
                for (l, v) in classes[c as usize - 1].x.to_array().into_iter().enumerate() {
                    truth[l][ix] = v;
                }
            }
        }
        let rois = roi_names.iter().map(|(name, c)| (name.to_string(), interior_mask(&class_map, *c))).collect();
        PhantomScene { dims, class_map, classes, truth, kappa_map: Array2::ones(dims), rois }
    }

    pub fn with_kappa(mut self, kappa_map: Array2<f64>) -> Result<Self> {
        if kappa_map.dim() != self.dims {
            return Err(Error::invalid("kappa map shape does not match the scene"));
        }
        self.kappa_map = kappa_map;
        Ok(self)
    }

    /// Voxels with nonzero class.
    pub fn tissue_mask(&self) -> Array2<bool> {
        self.class_map.mapv(|c| c > 0)
    }

    pub fn background_mask(&self) -> Array2<bool> {
        self.class_map.mapv(|c| c == 0)
    }

    pub fn roi(&self, name: &str) -> Result<&Array2<bool>> {
        self.rois.get(name).ok_or_else(|| Error::invalid(format!("no ROI named {name}")))
    }

    /// Truth of latent parameter `l` inside ROI `name` (constant per ROI).
    pub fn roi_truth(&self, name: &str, l: usize) -> Result<f64> {
        let mask = self.roi(name)?;
        let (ix, _) =
            mask.indexed_iter().find(|(_, m)| **m).ok_or_else(|| Error::invalid(format!("ROI {name} is empty")))?;
        Ok(self.truth[l][ix])
    }
}

/// Voxels of class `c` whose eight neighbours are also of class `c`.
fn interior_mask(class_map: &Array2<u8>, c: u8) -> Array2<bool> {
    let (rows, cols) = class_map.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        if class_map[[i, j]] != c || i == 0 || j == 0 || i + 1 == rows || j + 1 == cols {
            return false;
        }
        (i - 1..=i + 1).all(|a| (j - 1..=j + 1).all(|b| class_map[[a, b]] == c))
    })
}

fn radius(dims: (usize, usize), i: usize, j: usize) -> f64 {
    let ci = (dims.0 as f64 - 1.0) / 2.0;
    let cj = (dims.1 as f64 - 1.0) / 2.0;
    (i as f64 - ci).hypot(j as f64 - cj)
}

/// Concentric brain-like phantom: a gray-matter annulus around a
/// white-matter disk with a small central CSF region. κ varies by 20%.
pub fn brain_phantom(dims: (usize, usize)) -> Result<PhantomScene> {
    if dims.0 < 16 || dims.1 < 16 {
        return Err(Error::invalid(format!("brain phantom needs at least 16x16, got {dims:?}")));
    }
    let half = dims.0.min(dims.1) as f64 / 2.0;
    let outer = 0.9 * half;
    let wm = 0.55 * half;
    let csf = 0.15 * half;
    let class_map = Array2::from_shape_fn(dims, |(i, j)| {
        let r = radius(dims, i, j);
        if r <= csf {
            1
        } else if r <= wm {
            3
        } else if r <= outer {
            2
        } else {
            0
        }
    });
    let scene = PhantomScene::from_classes(class_map, vec![CSF, GRAY_MATTER, WHITE_MATTER], &[("WM", 3), ("GM", 2)]);
    scene.with_kappa(kappa_bump(dims, 0.2)?)
}

/// Water-filled container with five vials on a ring. Each vial has M0 = 1.
pub fn vial_phantom(dims: (usize, usize)) -> Result<PhantomScene> {
    if dims.0 < 64 || dims.1 < 64 {
        return Err(Error::invalid(format!("vial phantom needs at least 64x64, got {dims:?}")));
    }
    let half = dims.0.min(dims.1) as f64 / 2.0;
    let container = 0.9 * half;
    let ring = 0.5 * half;
    let vial = 0.2 * half;
    let ci = (dims.0 as f64 - 1.0) / 2.0;
    let cj = (dims.1 as f64 - 1.0) / 2.0;
    let centers: Vec<(f64, f64)> = (0..VIALS.len())
        .map(|v| {
            let th = 2.0 * std::f64::consts::PI * v as f64 / VIALS.len() as f64;
            (ci + ring * th.sin(), cj + ring * th.cos())
        })
        .collect();
    let class_map = Array2::from_shape_fn(dims, |(i, j)| {
        for (v, (a, b)) in centers.iter().enumerate() {
            if (i as f64 - a).hypot(j as f64 - b) <= vial {
                return v as u8 + 2;
            }
        }
        if radius(dims, i, j) <= container {
            1
        } else {
            0
        }
    });
    let mut classes = vec![WATER];
    for (name, t1, t2) in VIALS {
        classes.push(Tissue { name, x: LatentParams { m0: 1.0, t1, t2 } });
    }
    let names: Vec<(&str, u8)> = VIALS.iter().enumerate().map(|(v, (n, _, _))| (*n, v as u8 + 2)).collect();
    let scene = PhantomScene::from_classes(class_map, classes, &names);
    scene.with_kappa(kappa_bump(dims, 0.2)?)
}

/// Radial quadratic `κ(r) = (1 + a) − 2a (r / r_max)²`, `r_max` the center to
/// corner distance, so κ spans `[1 − a, 1 + a]`.
pub fn kappa_bump(dims: (usize, usize), amplitude: f64) -> Result<Array2<f64>> {
    if !(0.0..=0.5).contains(&amplitude) {
        return Err(Error::invalid(format!("kappa amplitude must be in [0, 0.5], got {amplitude}")));
    }
    let r_max = radius(dims, 0, 0).max(f64::MIN_POSITIVE);
    Ok(Array2::from_shape_fn(dims, |(i, j)| {
        let r = radius(dims, i, j) / r_max;
        (1.0 + amplitude) - 2.0 * amplitude * r * r
    }))
}

/// Noisy magnitudes and the magnitude of the added complex noise, per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub magnitudes: Vec<Array2<f64>>,
    pub noise: Vec<Array2<f64>>,
}

/// Noiseless signals, plus complex Gaussian noise (each component with
/// standard deviation σ_d), then magnitudes. Row `i` draws from random
/// stream `i` of `seed`. Background voxels carry pure noise.
pub fn synthesize<M: SignalModel + ?Sized>(
    scene: &PhantomScene,
    model: &M,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Synthesis> {
    let d = model.n_datasets();
    Error::check_len(d, noise.len())?;
    let (rows, cols) = scene.dims;
    let per_row: Vec<(Vec<f64>, Vec<f64>)> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let mut mags = Vec::with_capacity(cols * d);
            let mut eps = Vec::with_capacity(cols * d);
            let mut s = vec![0.0; d];
            for j in 0..cols {
                if scene.class_map[[i, j]] > 0 {
                    let x = LatentParams::from_slice(&[
                        scene.truth[0][[i, j]],
                        scene.truth[1][[i, j]],
                        scene.truth[2][[i, j]],
                    ])?;
                    model.signals_into(&x, &KnownParams::new(scene.kappa_map[[i, j]])?, &mut s)?;
                } else {
                    s.fill(0.0);
                }
                for (sd, sigma) in s.iter().zip(&noise.sigmas) {
                    let re: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
                    let im: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
                    mags.push((sd + re).hypot(im));
                    eps.push(re.hypot(im));
                }
            }
            Ok((mags, eps))
        })
        .collect::<Result<_>>()?;
    let mut magnitudes = vec![Array2::zeros(scene.dims); d];
    let mut noise_mag = vec![Array2::zeros(scene.dims); d];
    for (i, (m, e)) in per_row.iter().enumerate() {
        for j in 0..cols {
            for k in 0..d {
                magnitudes[k][[i, j]] = m[j * d + k];
                noise_mag[k][[i, j]] = e[j * d + k];
            }
        }
    }
    Ok(Synthesis { magnitudes, noise: noise_mag })
}

/// `‖y‖₂ / ‖ε‖₂`.
pub fn snr(y: &[f64], eps: &[f64]) -> Result<f64> {
    let ne = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ne == 0.0 {
        return Err(Error::invalid("noise norm is zero"));
    }
    Ok(y.iter().map(|v| v * v).sum::<f64>().sqrt() / ne)
}

/// Rayleigh second-moment estimate `sqrt(mean(r²)/2)`.
pub fn estimate_sigma(background: &[f64]) -> Result<f64> {
    if background.is_empty() {
        return Err(Error::invalid("no background voxels to estimate noise from"));
    }
    Ok((background.iter().map(|r| r * r).sum::<f64>() / (2.0 * background.len() as f64)).sqrt())
}

/// Values of `img` inside `mask`, in row-major order.
pub fn masked_values(img: &Array2<f64>, mask: &Array2<bool>) -> Result<Vec<f64>> {
    if img.dim() != mask.dim() {
        return Err(Error::invalid("image and mask shapes differ"));
    }
    let mut out = Vec::new();
    Zip::from(img).and(mask).for_each(|v, m| {
        if *m {
            out.push(*v);
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub rmse: f64,
    /// `std / sqrt(n)`.
    pub se_mean: f64,
    /// `std / sqrt(2(n − 1))`.
    pub se_std: f64,
}

pub fn roi_stats(map: &Array2<f64>, truth: f64, mask: &Array2<bool>) -> Result<RoiStats> {
    let v = masked_values(map, mask)?;
    let n = v.len();
    if n < 2 {
        return Err(Error::invalid(format!("ROI statistics need at least 2 voxels, got {n}")));
    }
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let rmse = (v.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / nf).sqrt();
    Ok(RoiStats { n, mean, std, rmse, se_mean: std / nf.sqrt(), se_std: std / (2.0 * (nf - 1.0)).sqrt() })
}

/// Rounds `value` to the decimal place of the leading digit of `se`.
pub fn round_to_se(value: f64, se: f64) -> Result<String> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::invalid(format!("standard error must be positive, got {se}")));
    }
    let place = se.log10().floor() as i32;
    if place >= 0 {
        let unit = 10f64.powi(place);
        Ok(format!("{}", (value / unit).round() * unit))
    } else {
        Ok(format!("{:.*}", (-place) as usize, value))
    }
}
