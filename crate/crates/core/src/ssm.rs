//! Linear PCA shape model over phase-binned volumes: `v ≈ v̄ + M·a`.
//!
//! Training goes through the `samples × samples` Gram matrix of the centred
//! data, so the cost is linear in the voxel count. Each basis column is
//! oriented so that its largest-magnitude entry is positive; variances use
//! the `1/(n−1)` convention.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::projector::Volume;

#[derive(Clone, Debug)]
pub struct ShapeModel {
    pub mean: Volume,
    /// `voxels × e`, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub mode_variances: Vec<f64>,
    /// `samples × e`; row `j` holds the weights of training volume `j`.
    pub training_weights: DMatrix<f64>,
    /// Variance of the centred training data summed over all directions.
    pub total_variance: f64,
}

impl ShapeModel {
    pub fn modes(&self) -> usize {
        self.basis.ncols()
    }

    pub fn samples(&self) -> usize {
        self.training_weights.nrows()
    }

    /// `v̄ + M·w`.
    pub fn reconstruct(&self, weights: &[f64]) -> Result<Volume> {
        if weights.len() != self.modes() {
            return Err(Error::Dimension(format!("shape model has {} modes, got {} weights", self.modes(), weights.len())));
        }
        let w = DVector::from_column_slice(weights);
        let offset = &self.basis * w;
        let values = self.mean.values().iter().zip(offset.iter()).map(|(m, o)| m + o).collect();
        Volume::new(self.mean.dims(), self.mean.spacing(), values)
    }

    /// `Mᵀ (v − v̄)`.
    pub fn weights_of(&self, v: &Volume) -> Result<Vec<f64>> {
        if !v.same_grid(&self.mean) {
            return Err(Error::Dimension("volume grid differs from the shape model".into()));
        }
        let centred = DVector::from_iterator(v.len(), v.values().iter().zip(self.mean.values()).map(|(a, b)| a - b));
        Ok((self.basis.transpose() * centred).iter().cloned().collect())
    }

    /// Cumulative explained-variance ratios of the kept modes.
    pub fn explained_variance(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mode_variances
            .iter()
            .map(|v| {
                acc += v;
                if self.total_variance > 0.0 {
                    (acc / self.total_variance).min(1.0)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// PCA with mean normalisation over `volumes`, keeping `modes` components.
pub fn train_ssm(volumes: &[Volume], modes: usize) -> Result<ShapeModel> {
    let n = volumes.len();
    if n < 2 {
        return Err(Error::Dimension(format!("shape model needs at least 2 volumes, got {n}")));
    }
    if volumes.iter().any(|v| !v.same_grid(&volumes[0])) {
        return Err(Error::Dimension("training volumes must share one grid".into()));
    }
    if modes == 0 || modes > n - 1 {
        return Err(Error::Dimension(format!("mode count {modes} outside 1..={}", n - 1)));
    }
    let voxels = volumes[0].len();
    let mut mean = vec![0.0; voxels];
    for v in volumes {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centred = DMatrix::zeros(voxels, n);
    for (j, v) in volumes.iter().enumerate() {
        for (r, (x, m)) in v.values().iter().zip(&mean).enumerate() {
            centred[(r, j)] = x - m;
        }
    }
    let svd = linalg::gram_svd(&centred);
    let mut basis = linalg::complete_orthonormal(&svd.u, modes);
    for mut col in basis.column_iter_mut() {
        let (imax, _) =
            col.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let training_weights = centred.transpose() * &basis;
    let denom = (n - 1) as f64;
    let mode_variances = (0..modes).map(|m| svd.s.get(m).map_or(0.0, |s| s * s / denom)).collect();
    let total_variance = svd.s.iter().map(|s| s * s).sum::<f64>() / denom;
    Ok(ShapeModel {
        mean: Volume::new(volumes[0].dims(), volumes[0].spacing(), mean)?,
        basis,
        mode_variances,
        training_weights,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volumes(n: usize, seed: u64) -> Vec<Volume> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Volume::new([6, 5, 4], [1.0; 3], (0..120).map(|_| rng.random_range(-100.0..100.0)).collect()).unwrap())
            .collect()
    }

    fn rel(a: &Volume, b: &Volume) -> f64 {
        let d: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.values().iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    #[test]
    fn two_point_pca() {
        let vols = random_volumes(2, 1);
        let m = train_ssm(&vols, 1).unwrap();
        let avg = vols[0].lin_comb(0.5, &vols[1], 0.5).unwrap();
        assert!(rel(&m.mean, &avg) < 1e-14);
        let half_norm = vols[0].values().iter().zip(avg.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let w = &m.training_weights;
        assert!((w[(0, 0)].abs() - half_norm).abs() < 1e-9);
        assert!((w[(0, 0)] + w[(1, 0)]).abs() < 1e-9);
    }

    #[test]
    fn full_modes_reconstruct_training_set() {
        let vols = random_volumes(6, 2);
        let m = train_ssm(&vols, 5).unwrap();
        assert!(linalg::orthonormality_defect(&m.basis) < 1e-10);
        for (j, v) in vols.iter().enumerate() {
            let w: Vec<f64> = m.training_weights.row(j).iter().cloned().collect();
            assert!(rel(&m.reconstruct(&w).unwrap(), v) < 1e-6);
        }
        // Columns of the weight matrix have zero mean.
        for c in 0..5 {
            let col = m.training_weights.column(c);
            assert!(col.sum().abs() <= 1e-9 * col.norm());
        }
        assert!(m.mode_variances.windows(2).all(|w| w[0] >= w[1]));
        let ev = m.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        assert!((ev[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_is_affine() {
        let vols = random_volumes(5, 3);
        let m = train_ssm(&vols, 3).unwrap();
        assert_eq!(m.reconstruct(&[0.0; 3]).unwrap(), m.mean);
        let w1 = [1.0, -2.0, 0.5];
        let w2 = [3.0, 0.25, -1.0];
        let w12: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let lhs = m.reconstruct(&w1).unwrap().lin_comb(1.0, &m.reconstruct(&w2).unwrap(), 1.0).unwrap();
        let lhs = lhs.lin_comb(1.0, &m.mean, -1.0).unwrap();
        let rhs = m.reconstruct(&w12).unwrap();
        let err = lhs.values().iter().zip(rhs.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        assert!(matches!(m.reconstruct(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_one_variation_explains_everything() {
        let base = random_volumes(1, 4).remove(0);
        let dir = random_volumes(1, 5).remove(0);
        let vols: Vec<Volume> = [-1.0, 0.3, 2.0, 0.7].iter().map(|&s| base.lin_comb(1.0, &dir, s).unwrap()).collect();
        let m = train_ssm(&vols, 2).unwrap();
        assert!((m.explained_variance()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_svd_oracle() {
        let vols = random_volumes(7, 6);
        let m = train_ssm(&vols, 4).unwrap();
        let n = vols.len();
        let mean = &m.mean;
        let x = DMatrix::from_fn(120, n, |r, c| vols[c].values()[r] - mean.values()[r]);
        let svd = x.svd(true, false);
        let mut s: Vec<f64> = svd.singular_values.iter().cloned().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let u = svd.u.unwrap();
        for k in 0..4 {
            assert!((m.mode_variances[k] - s[k] * s[k] / (n - 1) as f64).abs() < 1e-8 * s[0] * s[0]);
            // Same direction up to sign.
            let idx = svd.singular_values.iter().position(|&v| v == s[k]).unwrap();
            let dot = m.basis.column(k).dot(&u.column(idx)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sign_convention() {
        let m = train_ssm(&random_volumes(4, 7), 3).unwrap();
        for col in m.basis.column_iter() {
            let big = col.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn input_errors() {
        let vols = random_volumes(3, 8);
        assert!(matches!(train_ssm(&vols[..1], 1), Err(Error::Dimension(_))));
        assert!(matches!(train_ssm(&vols, 3), Err(Error::Dimension(_))));
        let odd = Volume::zeros([2, 2, 2], [1.0; 3]).unwrap();
        assert!(matches!(train_ssm(&[vols[0].clone(), odd], 1), Err(Error::Dimension(_))));
    }
}
