//! Gaussian target `N(m, Sigma)`.

use super::{RegularityParams, Target, TargetError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian target with analytic score `-Sigma^{-1}(x - m)`.
///
/// The potential Hessian is `Sigma^{-1}` everywhere, so the regularity
/// moduli are `alpha = 1/lambda_max(Sigma)` and
/// `beta = 1/lambda_min(Sigma)`.
pub fn gaussian_target(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Target, TargetError> {
    let dim = mean.len();
    if covariance.nrows() != dim || covariance.ncols() != dim {
        return Err(TargetError::NotSpd);
    }
    if (&covariance - covariance.transpose()).abs().max() > 1e-10 * covariance.abs().max() {
        return Err(TargetError::NotSpd);
    }
    let chol = nalgebra::Cholesky::new(covariance.clone()).ok_or(TargetError::NotSpd)?;
    let precision = chol.inverse();
    let chol_l = chol.l();
    let log_det: f64 = chol_l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

    let eig = covariance.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.max();
    let lam_min = eig.eigenvalues.min();
    if lam_min <= 0.0 {
        return Err(TargetError::NotSpd);
    }
    // ||∇V(x)|| = ||Sigma^{-1}(x-m)|| <= ||x||/lam_min + ||m||/lam_min
    let regularity = RegularityParams::new(
        1.0 / lam_max,
        1.0 / lam_min,
        1.0 / lam_min,
        mean.norm() / lam_min,
    )?;

    let m_density = mean.clone();
    let p_density = precision.clone();
    let log_density = move |x: &[f64]| {
        let d = DVector::from_row_slice(x) - &m_density;
        log_norm - 0.5 * (&p_density * &d).dot(&d)
    };

    let m_score = mean.clone();
    let p_score = precision.clone();
    let score = move |x: &[f64], out: &mut [f64]| {
        // out = -P (x - m), written without temporaries
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += p_score[(i, j)] * (xj - m_score[j]);
            }
            *o = -acc;
        }
    };

    let m_sample = mean.clone();
    let l_sample = chol_l.clone();
    let sampler = move |rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]| {
        let z =
            DVector::<f64>::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let x = &m_sample + &l_sample * z;
        out.copy_from_slice(x.as_slice());
    };

    Target::new(
        dim,
        Box::new(log_density),
        Box::new(score),
        Some(regularity),
        Some(Box::new(sampler)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_score_is_minus_x() {
        let t = gaussian_target(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let s = t.score(&[0.7, -1.2]);
        assert_abs_diff_eq!(s[0], -0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], 1.2, epsilon = 1e-14);
    }

    #[test]
    fn diag_covariance_regularity() {
        let t = gaussian_target(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let reg = t.regularity().unwrap();
        assert_abs_diff_eq!(reg.alpha, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(reg.beta, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn score_vanishes_at_mean() {
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let cov = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0],
        );
        let t = gaussian_target(mean.clone(), cov).unwrap();
        let s = t.score(mean.as_slice());
        for si in s {
            assert_abs_diff_eq!(si, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(gaussian_target(DVector::zeros(2), bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(gaussian_target(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn score_is_affine() {
        let t = gaussian_target(
            DVector::from_vec(vec![0.3, -0.4]),
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]),
        )
        .unwrap();
        // affine map: s(x+2y) - s(x+y) equals s(x+y) - s(x) exactly
        let x = [0.9, 1.1];
        let y = [-0.4, 0.25];
        let s0 = t.score(&x);
        let s1 = t.score(&[x[0] + y[0], x[1] + y[1]]);
        let s2 = t.score(&[x[0] + 2.0 * y[0], x[1] + 2.0 * y[1]]);
        for i in 0..2 {
            assert_abs_diff_eq!(s2[i] - s1[i], s1[i] - s0[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn reference_sampler_moments() {
        let mean = DVector::from_vec(vec![2.0, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[3.0, -0.8, -0.8, 1.2]);
        let t = gaussian_target(mean, cov).unwrap();
        let mut r = rng::seeded(5);
        let cloud = t.sample_reference(100_000, &mut r).unwrap();
        let m = cloud.mean();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 0.03);
        assert_abs_diff_eq!(m[1], -1.0, epsilon = 0.03);
        let c = cloud.covariance();
        assert_abs_diff_eq!(c[(0, 0)], 3.0, epsilon = 0.06);
        assert_abs_diff_eq!(c[(0, 1)], -0.8, epsilon = 0.04);
    }
}
