use ndarray::Array2;

use super::Estimator;
use crate::error::{Error, Result};

fn check_shapes(datasets: &[Array2<f64>], known: &[Array2<f64>], mask: &Array2<bool>) -> Result<()> {
    for img in datasets.iter().chain(known) {
        if img.dim() != mask.dim() {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match mask shape {:?}",
                img.dim(),
                mask.dim()
            )));
        }
    }
    Ok(())
}

/// Stacks the regressors `[|y|; ν]` of the masked voxels into a P×V matrix.
/// Voxels are taken in row-major order; their positions are returned as well.
#[allow(clippy::type_complexity)]
pub fn masked_regressors(
    datasets: &[Array2<f64>],
    known: &[Array2<f64>],
    mask: &Array2<bool>,
) -> Result<(Array2<f64>, Vec<(usize, usize)>)> {
    check_shapes(datasets, known, mask)?;
    let idx: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    let p = datasets.len() + known.len();
    let mut out = Array2::zeros((p, idx.len()));
    for (row, img) in datasets.iter().chain(known).enumerate() {
        for (j, &ix) in idx.iter().enumerate() {
            out[[row, j]] = img[ix];
        }
    }
    Ok((out, idx))
}

/// Applies `est` to every voxel in `mask`, returning one map per latent
/// parameter. Voxels outside the mask are zero.
pub fn predict_map<E: Estimator + ?Sized>(
    est: &E,
    datasets: &[Array2<f64>],
    known: &[Array2<f64>],
    mask: &Array2<bool>,
) -> Result<Vec<Array2<f64>>> {
    Error::check_len(est.regressor_dim(), datasets.len() + known.len())?;
    let (p, idx) = masked_regressors(datasets, known, mask)?;
    let mut maps = vec![Array2::zeros(mask.raw_dim()); est.latent_dim()];
    if idx.is_empty() {
        return Ok(maps);
    }
    let xhat = est.predict_batch(p.view())?;
    for (l, map) in maps.iter_mut().enumerate() {
        for (j, &ix) in idx.iter().enumerate() {
            map[ix] = xhat[[l, j]];
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{train_exact, KernelConfig, TrainingSet};
    use crate::signal::NoiseModel;
    use ndarray::array;

    fn estimator() -> crate::estimator::ExactPerk<KernelConfig> {
        let ts = TrainingSet::new(
            array![[1.0, 2.0, 3.0], [4.0, 5.0, 7.0], [1.0, 1.0, 2.0]],
            array![[0.1, 0.5, 0.9], [1.0, 1.0, 1.0]],
            NoiseModel::noiseless(1),
            0,
        )
        .unwrap();
        train_exact(&ts, &KernelConfig::new(1.0, vec![0.3, 0.3]).unwrap(), &[1e-3; 3]).unwrap()
    }

    #[test]
    fn empty_mask_gives_zero_maps() {
        let est = estimator();
        let y = Array2::from_elem((3, 4), 0.5);
        let k = Array2::ones((3, 4));
        let mask = Array2::from_elem((3, 4), false);
        let maps = predict_map(&est, &[y], &[k], &mask).unwrap();
        assert_eq!(maps.len(), 3);
        assert!(maps.iter().all(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_voxel_matches_predict() {
        let est = estimator();
        let y = Array2::from_shape_fn((3, 4), |(i, j)| 0.1 * (i + j) as f64);
        let k = Array2::ones((3, 4));
        let mut mask = Array2::from_elem((3, 4), false);
        mask[[1, 2]] = true;
        let maps = predict_map(&est, std::slice::from_ref(&y), &[k], &mask).unwrap();
        let want = est.predict(array![y[[1, 2]], 1.0].view()).unwrap();
        for l in 0..3 {
            assert_eq!(maps[l][[1, 2]], want[l]);
            assert_eq!(maps[l][[0, 0]], 0.0);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let est = estimator();
        let y = Array2::zeros((3, 4));
        let k = Array2::ones((4, 3));
        let mask = Array2::from_elem((3, 4), true);
        assert!(predict_map(&est, std::slice::from_ref(&y), &[k], &mask).is_err());
        assert!(predict_map(&est, &[y.clone(), y], &[Array2::ones((3, 4))], &mask).is_err());
    }
}
