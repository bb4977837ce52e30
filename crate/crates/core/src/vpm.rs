//! Dictionary grid search with variable projection, the maximum-likelihood
//! baseline. `M0` is projected out per atom; κ variation is handled by
//! clustering the κ map and building one dictionary per cluster center.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{KnownParams, LatentParams, SignalModel};
use crate::util::logspace;

#[derive(Debug, Clone, PartialEq)]
pub struct KappaClusters {
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub distortion: Vec<f64>,
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (v - c).abs() < (v - centers[best]).abs() {
            best = i;
        }
    }
    best
}

fn count_distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v.len()
}

/// One-dimensional k-means with k-means++ seeding followed by Lloyd
/// iterations until the assignment stops changing or `max_iters` is reached.
pub fn kmeanspp(values: &[f64], k: usize, seed: u64, max_iters: usize) -> Result<KappaClusters> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input must be finite"));
    }
    let distinct = count_distinct(values);
    if distinct < k {
        return Err(Error::invalid(format!("k-means needs {k} distinct values, found {distinct}")));
    }
    let mut rng = rng::stream(seed, 0);
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|d| *d > 0.0).expect("distinct values remain");
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = values[pick];
        centers.push(c);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - c).powi(2));
        }
    }

    let mut labels: Vec<usize> = values.iter().map(|v| nearest(&centers, *v)).collect();
    let mut distortion = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (v, l) in values.iter().zip(&labels) {
            sum[*l] += v;
            count[*l] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centers[c] = sum[c] / count[c] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|v| nearest(&centers, *v)).collect();
        let changed = next != labels;
        labels = next;
        distortion.push(values.iter().zip(&labels).map(|(v, l)| (v - centers[*l]).powi(2)).sum());
        if !changed {
            break;
        }
    }
    Ok(KappaClusters { centers, labels, distortion })
}

/// Unit-M0 signal vectors over a log-spaced (T1, T2) grid at one κ.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// A×D: atom `i_t1·|t2_grid| + i_t2` in row order.
    pub atoms: Array2<f64>,
    pub t1_grid: Vec<f64>,
    pub t2_grid: Vec<f64>,
    pub kappa: f64,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_datasets(&self) -> usize {
        self.atoms.ncols()
    }

    /// (T1, T2) of atom `a`.
    pub fn params(&self, a: usize) -> (f64, f64) {
        let n2 = self.t2_grid.len();
        (self.t1_grid[a / n2], self.t2_grid[a % n2])
    }
}

fn check_support(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::invalid(format!("invalid {name} support ({lo}, {hi})")));
    }
    Ok(())
}

pub fn build_dictionary<M: SignalModel + ?Sized>(
    model: &M,
    kappa: f64,
    t1_count: usize,
    t2_count: usize,
    t1_support: (f64, f64),
    t2_support: (f64, f64),
) -> Result<Dictionary> {
    if t1_count == 0 || t2_count == 0 {
        return Err(Error::invalid("dictionary grid counts must be at least 1"));
    }
    check_support("T1", t1_support)?;
    check_support("T2", t2_support)?;
    let t1_grid = logspace(t1_support.0, t1_support.1, t1_count);
    let t2_grid = logspace(t2_support.0, t2_support.1, t2_count);
    let d = model.n_datasets();
    let nu = KnownParams::new(kappa)?;
    let rows: Vec<Vec<f64>> = t1_grid
        .par_iter()
        .map(|&t1| {
            let mut row = Vec::with_capacity(t2_grid.len() * d);
            let mut s = vec![0.0; d];
            for &t2 in &t2_grid {
                model.signals_into(&LatentParams::new(1.0, t1, t2)?, &nu, &mut s)?;
                if !s.iter().any(|v| *v > 0.0) {
                    return Err(Error::invalid(format!("all-zero atom at T1 = {t1}, T2 = {t2}, kappa = {kappa}")));
                }
                row.extend_from_slice(&s);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let atoms = Array2::from_shape_vec((t1_count * t2_count, d), rows.concat()).expect("shape");
    Ok(Dictionary { atoms, t1_grid, t2_grid, kappa })
}

/// Projection and residual of `y` onto one atom.
fn project(atom: &[f64], y: &[f64]) -> (f64, f64) {
    let mut dy = 0.0;
    let mut dd = 0.0;
    for (a, b) in atom.iter().zip(y) {
        dy += a * b;
        dd += a * a;
    }
    let m0 = (dy / dd).max(0.0);
    let r = atom.iter().zip(y).map(|(a, b)| (b - m0 * a).powi(2)).sum();
    (m0, r)
}

/// Exhaustive search over `dict` with `M0 = max(0, ⟨d, y⟩/⟨d, d⟩)` per atom.
/// Ties go to the atom with the smaller grid index.
pub fn vpm_estimate(y: &[f64], dict: &Dictionary) -> Result<LatentParams> {
    Error::check_len(dict.n_datasets(), y.len())?;
    if y.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("magnitudes must be nonnegative"));
    }
    let mut best = (usize::MAX, 0.0, f64::INFINITY);
    for (a, atom) in dict.atoms.rows().into_iter().enumerate() {
        let atom = atom.as_slice().expect("standard layout");
        if atom.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(format!("all-zero atom {a}")));
        }
        let (m0, r) = project(atom, y);
        if r < best.2 {
            best = (a, m0, r);
        }
    }
    let (t1, t2) = dict.params(best.0);
    Ok(LatentParams { m0: best.1, t1, t2 })
}

/// Residual `‖y − M0·d_a‖²` of every atom at its projected `M0`.
pub fn vpm_residuals(y: &[f64], dict: &Dictionary) -> Result<Vec<f64>> {
    Error::check_len(dict.n_datasets(), y.len())?;
    Ok(dict.atoms.rows().into_iter().map(|a| project(a.as_slice().expect("standard layout"), y).1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpmConfig {
    pub clusters: usize,
    pub t1_count: usize,
    pub t2_count: usize,
    pub t1_support: (f64, f64),
    pub t2_support: (f64, f64),
    pub seed: u64,
    pub max_iters: usize,
}

impl VpmConfig {
    /// 20 clusters and a 500×500 grid.
    pub fn full() -> Self {
        VpmConfig {
            clusters: 20,
            t1_count: 500,
            t2_count: 500,
            t1_support: (10f64.powf(1.5), 10f64.powf(3.5)),
            t2_support: (10f64.powf(0.5), 10f64.powf(3.0)),
            seed: 0,
            max_iters: 100,
        }
    }

    /// 5 clusters and a 100×100 grid.
    pub fn desk() -> Self {
        VpmConfig { clusters: 5, t1_count: 100, t2_count: 100, ..VpmConfig::full() }
    }
}

#[derive(Debug, Clone)]
pub struct VpmResult {
    /// M0, T1 and T2 maps; zero outside the mask.
    pub maps: Vec<Array2<f64>>,
    pub clusters: KappaClusters,
}

/// Per-voxel VPM over `mask`, with one dictionary per κ cluster. If the
/// masked κ map has fewer distinct values than `cfg.clusters`, it is
/// clustered into that many instead.
pub fn vpm_map<M: SignalModel + ?Sized>(
    model: &M,
    datasets: &[Array2<f64>],
    kappa_map: &Array2<f64>,
    mask: &Array2<bool>,
    cfg: &VpmConfig,
) -> Result<VpmResult> {
    Error::check_len(model.n_datasets(), datasets.len())?;
    for img in datasets.iter().chain(std::iter::once(kappa_map)) {
        if img.dim() != mask.dim() {
            return Err(Error::invalid(format!("image shape {:?} does not match mask {:?}", img.dim(), mask.dim())));
        }
    }
    let idx: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    let mut maps = vec![Array2::zeros(mask.raw_dim()); 3];
    if idx.is_empty() {
        let clusters = KappaClusters { centers: vec![], labels: vec![], distortion: vec![] };
        return Ok(VpmResult { maps, clusters });
    }
    let kappas: Vec<f64> = idx.iter().map(|&i| kappa_map[i]).collect();
    let k = cfg.clusters.min(count_distinct(&kappas));
    if k < cfg.clusters {
        log::info!("kappa map has only {k} distinct values; using {k} clusters");
    }
    let clusters = kmeanspp(&kappas, k, cfg.seed, cfg.max_iters)?;
    let dicts: Vec<Dictionary> = clusters
        .centers
        .par_iter()
        .map(|&c| build_dictionary(model, c, cfg.t1_count, cfg.t2_count, cfg.t1_support, cfg.t2_support))
        .collect::<Result<_>>()?;
    let est: Vec<LatentParams> = idx
        .par_iter()
        .zip(&clusters.labels)
        .map(|(&i, &label)| {
            let y: Vec<f64> = datasets.iter().map(|img| img[i]).collect();
            vpm_estimate(&y, &dicts[label])
        })
        .collect::<Result<_>>()?;
    for (&i, x) in idx.iter().zip(&est) {
        for (l, v) in x.to_array().into_iter().enumerate() {
            maps[l][i] = v;
        }
    }
    Ok(VpmResult { maps, clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{acquisition_signal, Acquisition};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn kmeans_examples() {
        let v = [0.9, 1.0, 1.1, 1.3];
        let one = kmeanspp(&v, 1, 0, 100).unwrap();
        assert!((one.centers[0] - 1.075).abs() < 1e-15);
        let all = kmeanspp(&v, 4, 0, 100).unwrap();
        assert_eq!(*all.distortion.last().unwrap(), 0.0);
        assert!(kmeanspp(&[1.0, 1.0, 2.0], 3, 0, 100).is_err());
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = rng::stream(3, 0);
        let means = [0.7, 1.0, 1.3];
        let mut v = Vec::new();
        for m in means {
            for _ in 0..200 {
                v.push(m + 0.02 * (rng.random::<f64>() - 0.5));
            }
        }
        let c = kmeanspp(&v, 3, 11, 100).unwrap();
        let mut centers = c.centers.clone();
        centers.sort_by(|a, b| a.total_cmp(b));
        for (c, m) in centers.iter().zip(means) {
            assert!((c - m).abs() < 0.01);
        }
        assert!(c.distortion.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn dictionary_shapes() {
        let acq = Acquisition::brain_relaxometry();
        let d = build_dictionary(&acq, 1.0, 1, 1, (800.0, 800.0), (80.0, 80.0)).unwrap();
        let want = acquisition_signal(&LatentParams::new(1.0, 800.0, 80.0).unwrap(), &KnownParams { kappa: 1.0 }, &acq)
            .unwrap();
        assert_eq!(d.atoms.row(0).to_vec(), want);
        assert!(build_dictionary(&acq, 1.0, 0, 3, (1.0, 2.0), (1.0, 2.0)).is_err());
        assert!(build_dictionary(&acq, 1.0, 3, 3, (-1.0, 2.0), (1.0, 2.0)).is_err());
    }

    #[test]
    fn exact_grid_member_is_recovered() {
        let acq = Acquisition::brain_relaxometry();
        let d = build_dictionary(&acq, 0.95, 10, 10, (300.0, 3000.0), (20.0, 300.0)).unwrap();
        let (t1, t2) = d.params(37);
        let y =
            acquisition_signal(&LatentParams::new(1.3, t1, t2).unwrap(), &KnownParams { kappa: 0.95 }, &acq).unwrap();
        let x = vpm_estimate(&y, &d).unwrap();
        assert_eq!((x.t1, x.t2), (t1, t2));
        assert!((x.m0 - 1.3).abs() <= 1e-12);
        let y2: Vec<f64> = y.iter().map(|v| 2.5 * v).collect();
        let x2 = vpm_estimate(&y2, &d).unwrap();
        assert_eq!((x2.t1, x2.t2), (t1, t2));
        assert!((x2.m0 - 2.5 * x.m0).abs() < 1e-12);
    }

    #[test]
    fn masked_out_voxels_are_zero_and_constant_kappa_collapses() {
        let acq = Acquisition::brain_relaxometry();
        let y = acquisition_signal(&LatentParams::new(1.0, 900.0, 70.0).unwrap(), &KnownParams { kappa: 1.0 }, &acq)
            .unwrap();
        let data: Vec<Array2<f64>> = y.iter().map(|v| Array2::from_elem((4, 4), *v)).collect();
        let kappa = Array2::ones((4, 4));
        let mut mask = Array2::from_elem((4, 4), true);
        mask[[0, 0]] = false;
        let cfg = VpmConfig { t1_count: 20, t2_count: 20, ..VpmConfig::desk() };
        let r = vpm_map(&acq, &data, &kappa, &mask, &cfg).unwrap();
        assert_eq!(r.clusters.centers, vec![1.0]);
        assert!(r.maps.iter().all(|m| m[[0, 0]] == 0.0));
        assert!(r.maps[1][[2, 2]] > 0.0);
    }

    proptest! {
        #[test]
        fn returned_atom_has_minimal_residual(y in prop::collection::vec(0.0f64..0.2, 4)) {
            let acq = Acquisition::brain_relaxometry();
            let d = build_dictionary(&acq, 1.0, 6, 6, (300.0, 3000.0), (20.0, 300.0)).unwrap();
            let x = vpm_estimate(&y, &d).unwrap();
            let r = vpm_residuals(&y, &d).unwrap();
            let best = r.iter().copied().fold(f64::INFINITY, f64::min);
            let (_, here) = project(
                d.atoms.row(d.t1_grid.iter().position(|v| *v == x.t1).unwrap() * 6
                    + d.t2_grid.iter().position(|v| *v == x.t2).unwrap()).as_slice().unwrap(),
                &y,
            );
            prop_assert!(here <= best);
        }
    }
}
