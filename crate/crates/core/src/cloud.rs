//! Particle clouds: the discrete representation of the evolving measure.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("particle cloud must contain at least one particle")]
    Empty,
    #[error("data length {len} is not a multiple of dim {dim}")]
    RaggedData { len: usize, dim: usize },
    #[error("non-finite coordinate at particle {particle}, coordinate {coord}")]
    NonFinite { particle: usize, coord: usize },
}

/// N particles in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl ParticleCloud {
    /// Builds a cloud from a flat row-major buffer.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self, CloudError> {
        if dim == 0 || data.is_empty() {
            return Err(CloudError::Empty);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CloudError::RaggedData {
                len: data.len(),
                dim,
            });
        }
        let n = data.len() / dim;
        let cloud = ParticleCloud { data, n, dim };
        cloud.check_finite()?;
        Ok(cloud)
    }

    /// Builds a cloud from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CloudError> {
        if rows.is_empty() {
            return Err(CloudError::Empty);
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(CloudError::RaggedData {
                    len: row.len(),
                    dim,
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim)
    }

    /// Zero-initialized cloud, useful as a write target.
    pub fn zeros(n: usize, dim: usize) -> Self {
        ParticleCloud {
            data: vec![0.0; n * dim],
            n,
            dim,
        }
    }

    /// Draws `n` particles from `N(mean, cov)` using the Cholesky factor
    /// of `cov`.
    pub fn gaussian<R: Rng>(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        n: usize,
        rng: &mut R,
    ) -> Result<Self, CloudError> {
        let dim = mean.len();
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or(CloudError::NonFinite { particle: 0, coord: 0 })?;
        let l = chol.l();
        let mut data = vec![0.0; n * dim];
        let mut z = DVector::<f64>::zeros(dim);
        for i in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x = mean + &l * &z;
            data[i * dim..(i + 1) * dim].copy_from_slice(x.as_slice());
        }
        Self::from_flat(data, dim)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Empirical mean, one entry per coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (mi, xi) in m.iter_mut().zip(row) {
                *mi += xi;
            }
        }
        for mi in m.iter_mut() {
            *mi /= self.n as f64;
        }
        m
    }

    /// Empirical covariance with the 1/N normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut cov = DMatrix::<f64>::zeros(self.dim, self.dim);
        for row in self.rows() {
            for a in 0..self.dim {
                let da = row[a] - m[a];
                for b in a..self.dim {
                    cov[(a, b)] += da * (row[b] - m[b]);
                }
            }
        }
        for a in 0..self.dim {
            for b in a..self.dim {
                cov[(a, b)] /= self.n as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov
    }

    /// Per-coordinate population standard deviation.
    pub fn std(&self) -> Vec<f64> {
        let m = self.mean();
        let mut var = vec![0.0; self.dim];
        for row in self.rows() {
            for (vi, (xi, mi)) in var.iter_mut().zip(row.iter().zip(&m)) {
                let d = xi - mi;
                *vi += d * d;
            }
        }
        var.iter().map(|v| (v / self.n as f64).sqrt()).collect()
    }

    /// Index of the first non-finite coordinate, if any.
    pub fn check_finite(&self) -> Result<(), CloudError> {
        for (idx, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CloudError::NonFinite {
                    particle: idx / self.dim,
                    coord: idx % self.dim,
                });
            }
        }
        Ok(())
    }

    /// Largest absolute coordinate in the cloud.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Applies `f` to every particle, writing the moved cloud.
    pub fn map_rows<F: Fn(usize, &[f64], &mut [f64])>(&self, f: F) -> ParticleCloud {
        let mut out = ParticleCloud::zeros(self.n, self.dim);
        for i in 0..self.n {
            let (src, dst) = (self.row(i), &mut out.data[i * self.dim..(i + 1) * self.dim]);
            f(i, src, dst);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(ParticleCloud::from_flat(vec![], 2).is_err());
        assert!(ParticleCloud::from_flat(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(ParticleCloud::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = ParticleCloud::from_flat(vec![0.0, 1.0, f64::NAN, 2.0], 2).unwrap_err();
        match err {
            CloudError::NonFinite { particle, coord } => {
                assert_eq!((particle, coord), (1, 0));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn moments_of_gaussian_draw() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut r = rng::seeded(3);
        let cloud = ParticleCloud::gaussian(&mean, &cov, 200_000, &mut r).unwrap();
        let m = cloud.mean();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(m[1], -2.0, epsilon = 0.02);
        let c = cloud.covariance();
        assert_abs_diff_eq!(c[(0, 0)], 2.0, epsilon = 0.05);
        assert_abs_diff_eq!(c[(0, 1)], 0.5, epsilon = 0.03);
        assert_abs_diff_eq!(c[(1, 1)], 1.0, epsilon = 0.03);
    }

    #[test]
    fn mean_and_std_by_hand() {
        let cloud = ParticleCloud::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_abs_diff_eq!(cloud.mean()[0], 2.0, epsilon = 1e-15);
        // population std of {1,2,3} is sqrt(2/3)
        assert_abs_diff_eq!(cloud.std()[0], (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }
}
